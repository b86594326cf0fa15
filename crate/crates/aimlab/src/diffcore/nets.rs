//! Multi-layer perceptron built from tape primitives.

use rand::Rng;

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, VarId};
use crate::Result;

/// Nonlinearity applied after a linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

/// Fully connected network: alternating linear layers and activations.
/// The hidden activation applies to every layer except the last; the
/// output activation applies to the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// `sizes` lists the layer widths input-first, e.g. `[16, 64, 64, 1]`.
    /// Weights are fan-in uniform, biases zero.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for win in sizes.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let w = store.add_uniform(fan_out, fan_in, rng);
            let b = store.add_zeros(fan_out);
            layers.push((w, b));
        }
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: VarId) -> Result<VarId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(store, *w, *b, h)?;
            let act = if i == last { self.output } else { self.hidden };
            h = match act {
                Activation::Identity => h,
                Activation::Tanh => tape.tanh(h),
                Activation::Sigmoid => tape.sigmoid(h),
            };
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [*w, *b])
            .collect()
    }
}
