//! Parameter storage with paired gradient buffers.

use rand::Rng;

use crate::{AimError, Result};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// A trainable tensor: flat row-major values plus a same-shape gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Rows × cols view for 2-D parameters.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => panic!("parameter is not 1-D or 2-D"),
        }
    }
}

/// Owns every parameter of one model. Gradients accumulate additively until
/// an optimizer step zeroes them.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, values.len(), "shape does not match value count");
        let grad = vec![0.0; values.len()];
        self.params.push(Parameter {
            shape,
            values,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn add_uniform(&mut self, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (cols as f64).sqrt();
        let values = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(vec![rows, cols], values)
    }

    /// Bias vector init: zeros.
    pub fn add_zeros(&mut self, len: usize) -> ParamId {
        self.add(vec![len], vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// All entries (values and gradients) finite?
    pub fn check_finite(&self) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            if p.values.iter().any(|v| !v.is_finite()) {
                return Err(AimError::Numerical(format!(
                    "parameter {i} holds non-finite values"
                )));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(AimError::Numerical(format!(
                    "parameter {i} holds non-finite gradients"
                )));
            }
        }
        Ok(())
    }

    /// Bit-level fingerprint of all parameter values, for freeze assertions.
    pub fn value_fingerprint(&self) -> u64 {
        // FNV-1a over the raw f64 bit patterns.
        let mut hash: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            for v in &p.values {
                for byte in v.to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x100000001b3);
                }
            }
        }
        hash
    }
}
