//! Central-difference verification of tape gradients.

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, VarId};
use crate::Result;

/// Compares tape gradients against central finite differences for every
/// element of `params` and returns the worst relative error
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// `forward` must be deterministic: any sampled choices have to be fixed
/// before calling, otherwise the perturbed evaluations measure a different
/// function.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    mut forward: F,
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<VarId>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|id| store.get(*id).grad.clone())
        .collect();

    let eval = |store: &ParamStore, forward: &mut F| -> Result<f64> {
        let mut t = Tape::new();
        let l = forward(&mut t, store)?;
        Ok(t.scalar(l))
    };

    let mut max_rel: f64 = 0.0;
    for (pi, id) in params.iter().enumerate() {
        for j in 0..store.get(*id).numel() {
            let orig = store.get(*id).values[j];
            store.get_mut(*id).values[j] = orig + epsilon;
            let f_plus = eval(store, &mut forward)?;
            store.get_mut(*id).values[j] = orig - epsilon;
            let f_minus = eval(store, &mut forward)?;
            store.get_mut(*id).values[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
