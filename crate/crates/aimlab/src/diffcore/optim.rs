//! Gradient-descent update rules over a parameter store.

use std::collections::BTreeMap;

use super::param::{ParamId, ParamStore};

/// How accumulated gradients turn into parameter updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl UpdateRule {
    pub fn adam(lr: f64) -> Self {
        UpdateRule::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Applies an update rule to a fixed set of parameters. Moment buffers are
/// keyed by parameter id, so one optimizer must always be stepped with the
/// same parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: UpdateRule,
    m: BTreeMap<usize, Vec<f64>>,
    v: BTreeMap<usize, Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(rule: UpdateRule) -> Self {
        Self {
            rule,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    /// Applies one update from the gradients currently in the store, then
    /// zeroes the gradients of the stepped parameters.
    pub fn step(&mut self, store: &mut ParamStore, params: &[ParamId]) {
        match self.rule {
            UpdateRule::Sgd { lr } => {
                for id in params {
                    let p = store.get_mut(*id);
                    for (w, g) in p.values.iter_mut().zip(&p.grad) {
                        *w -= lr * g;
                    }
                }
            }
            UpdateRule::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for id in params {
                    let p = store.get_mut(*id);
                    let n = p.values.len();
                    let m = self.m.entry(id.index()).or_insert_with(|| vec![0.0; n]);
                    let v = self.v.entry(id.index()).or_insert_with(|| vec![0.0; n]);
                    for i in 0..n {
                        let g = p.grad[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        for id in params {
            store.get_mut(*id).grad.fill(0.0);
        }
    }
}
