//! Operation tape for reverse-mode gradient accumulation.
//!
//! A forward pass appends one node per primitive operation. `backward`
//! replays the record in reverse, accumulating dL/dparam into the
//! [`ParamStore`] gradient buffers, and consumes the tape.

use super::param::{ParamId, ParamStore};
use super::sample::{log_softmax, softmax};
use crate::{AimError, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant leaf; no gradient flows out.
    Input,
    /// Whole parameter, flattened.
    ParamVec { id: ParamId },
    /// One row of a 2-D parameter.
    ParamRow { id: ParamId, row: usize },
    /// weights · x + bias.
    Linear { w: ParamId, b: ParamId, x: VarId },
    Tanh { x: VarId },
    Sigmoid { x: VarId },
    Concat { xs: Vec<VarId> },
    Slice { x: VarId, start: usize },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Scale { x: VarId, c: f64 },
    /// Sum of scalar nodes.
    Sum { xs: Vec<VarId> },
    /// Σ xᵢ² over one vector.
    SumSquares { x: VarId },
    /// Mean of squared element-wise differences against a constant target.
    Mse { pred: VarId, target: Vec<f64> },
    /// −log softmax(logits)[target].
    CrossEntropy { logits: VarId, target: usize },
    /// log softmax(logits)[index].
    LogProb { logits: VarId, index: usize },
    /// Entropy of softmax(logits).
    Entropy { logits: VarId },
    /// Forward value is the given constant; gradient copies through to `x`.
    StraightThrough { x: VarId },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Records primitive operations of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    /// Forward value of a node.
    pub fn value(&self, x: VarId) -> &[f64] {
        &self.nodes[x.0].value
    }

    /// Forward value of a scalar node.
    pub fn scalar(&self, x: VarId) -> f64 {
        debug_assert_eq!(self.nodes[x.0].value.len(), 1);
        self.nodes[x.0].value[0]
    }

    pub fn input(&mut self, values: &[f64]) -> VarId {
        self.push(Op::Input, values.to_vec())
    }

    pub fn scalar_input(&mut self, v: f64) -> VarId {
        self.push(Op::Input, vec![v])
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> VarId {
        self.push(Op::ParamVec { id }, store.get(id).values.clone())
    }

    pub fn param_row(&mut self, store: &ParamStore, id: ParamId, row: usize) -> VarId {
        let p = store.get(id);
        let (rows, cols) = p.dims2();
        assert!(row < rows, "row {row} out of range for {rows}-row parameter");
        let values = p.values[row * cols..(row + 1) * cols].to_vec();
        self.push(Op::ParamRow { id, row }, values)
    }

    /// weights·x + bias. Weights are (out × in) row-major.
    pub fn linear(
        &mut self,
        store: &ParamStore,
        w: ParamId,
        b: ParamId,
        x: VarId,
    ) -> Result<VarId> {
        let (out_dim, in_dim) = store.get(w).dims2();
        let xv = &self.nodes[x.0].value;
        if xv.len() != in_dim {
            return Err(AimError::Config(format!(
                "linear input length {} does not match weight inner dimension {}",
                xv.len(),
                in_dim
            )));
        }
        let bias = &store.get(b).values;
        if bias.len() != out_dim {
            return Err(AimError::Config(format!(
                "bias length {} does not match weight outer dimension {}",
                bias.len(),
                out_dim
            )));
        }
        let wv = &store.get(w).values;
        let mut y = bias.clone();
        for i in 0..out_dim {
            let row = &wv[i * in_dim..(i + 1) * in_dim];
            y[i] += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(Op::Linear { w, b, x }, y))
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh { x }, y)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let y: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(Op::Sigmoid { x }, y)
    }

    pub fn concat(&mut self, xs: &[VarId]) -> VarId {
        let mut y = Vec::new();
        for x in xs {
            y.extend_from_slice(&self.nodes[x.0].value);
        }
        self.push(Op::Concat { xs: xs.to_vec() }, y)
    }

    pub fn slice(&mut self, x: VarId, start: usize, len: usize) -> VarId {
        let y = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, y)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let y: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(u, v)| u + v)
            .collect();
        self.push(Op::Add { a, b }, y)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let y: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(u, v)| u - v)
            .collect();
        self.push(Op::Sub { a, b }, y)
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> VarId {
        let y: Vec<f64> = self.nodes[x.0].value.iter().map(|v| c * v).collect();
        self.push(Op::Scale { x, c }, y)
    }

    /// Sum of scalar nodes into one scalar.
    pub fn sum(&mut self, xs: &[VarId]) -> VarId {
        let total: f64 = xs.iter().map(|x| self.nodes[x.0].value[0]).sum();
        self.push(Op::Sum { xs: xs.to_vec() }, vec![total])
    }

    pub fn sum_squares(&mut self, x: VarId) -> VarId {
        let total: f64 = self.nodes[x.0].value.iter().map(|v| v * v).sum();
        self.push(Op::SumSquares { x }, vec![total])
    }

    /// Constant copy of a node's forward value; blocks gradient flow.
    pub fn detach(&mut self, x: VarId) -> VarId {
        let v = self.nodes[x.0].value.clone();
        self.input(&v)
    }

    /// Forward value is `value`; gradient passes unchanged to `x`.
    /// `value` must have the same length as `x`.
    pub fn straight_through(&mut self, x: VarId, value: &[f64]) -> VarId {
        assert_eq!(self.nodes[x.0].value.len(), value.len());
        self.push(Op::StraightThrough { x }, value.to_vec())
    }

    /// Mean of squared element-wise differences. Differentiable w.r.t. `pred`.
    pub fn mse(&mut self, pred: VarId, target: &[f64]) -> Result<VarId> {
        let pv = &self.nodes[pred.0].value;
        if pv.len() != target.len() {
            return Err(AimError::Config(format!(
                "mse length mismatch: prediction {} vs target {}",
                pv.len(),
                target.len()
            )));
        }
        let n = pv.len() as f64;
        let loss = pv
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            vec![loss],
        ))
    }

    /// −log softmax(logits)[target].
    pub fn cross_entropy(&mut self, logits: VarId, target: usize) -> Result<VarId> {
        let lv = &self.nodes[logits.0].value;
        if target >= lv.len() {
            return Err(AimError::Config(format!(
                "cross-entropy target {} out of range for {} logits",
                target,
                lv.len()
            )));
        }
        let loss = -log_softmax(lv)[target];
        Ok(self.push(Op::CrossEntropy { logits, target }, vec![loss]))
    }

    /// log softmax(logits)[index].
    pub fn log_prob(&mut self, logits: VarId, index: usize) -> Result<VarId> {
        let lv = &self.nodes[logits.0].value;
        if index >= lv.len() {
            return Err(AimError::Config(format!(
                "log-prob index {} out of range for {} logits",
                index,
                lv.len()
            )));
        }
        let lp = log_softmax(lv)[index];
        Ok(self.push(Op::LogProb { logits, index }, vec![lp]))
    }

    /// Entropy −Σ p log p of softmax(logits).
    pub fn entropy(&mut self, logits: VarId) -> VarId {
        let lv = &self.nodes[logits.0].value;
        let lp = log_softmax(lv);
        let h: f64 = lp.iter().map(|l| -l.exp() * l).sum();
        self.push(Op::Entropy { logits }, vec![h])
    }

    /// Replays the record in reverse, accumulating dloss/dparam into the
    /// store. Consumes the tape: the record is cleared by construction.
    pub fn backward(self, loss: VarId, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(AimError::Usage(
                "backward called without a forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AimError::Usage(format!(
                "backward requires a scalar loss, got a length-{} node",
                self.nodes[loss.0].value.len()
            )));
        }

        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.0][0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            if grads[idx].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g = grads[idx].clone();
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::ParamVec { id } => {
                    let p = store.get_mut(*id);
                    for (pg, gi) in p.grad.iter_mut().zip(&g) {
                        *pg += gi;
                    }
                }
                Op::ParamRow { id, row } => {
                    let p = store.get_mut(*id);
                    let (_, cols) = p.dims2();
                    for (j, gi) in g.iter().enumerate() {
                        p.grad[row * cols + j] += gi;
                    }
                }
                Op::Linear { w, b, x } => {
                    let xv = self.nodes[x.0].value.clone();
                    let (out_dim, in_dim) = store.get(*w).dims2();
                    // dL/dx = Wᵀ·g
                    {
                        let wv = &store.get(*w).values;
                        let gx = &mut grads[x.0];
                        for i in 0..out_dim {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &wv[i * in_dim..(i + 1) * in_dim];
                            for (gxj, wij) in gx.iter_mut().zip(row) {
                                *gxj += gi * wij;
                            }
                        }
                    }
                    // dL/dW = g ⊗ x, dL/db = g
                    {
                        let pw = store.get_mut(*w);
                        for i in 0..out_dim {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &mut pw.grad[i * in_dim..(i + 1) * in_dim];
                            for (wg, xj) in row.iter_mut().zip(&xv) {
                                *wg += gi * xj;
                            }
                        }
                        let pb = store.get_mut(*b);
                        for (bg, gi) in pb.grad.iter_mut().zip(&g) {
                            *bg += gi;
                        }
                    }
                }
                Op::Tanh { x } => {
                    let y = self.nodes[idx].value.clone();
                    for (j, gi) in g.iter().enumerate() {
                        grads[x.0][j] += gi * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Sigmoid { x } => {
                    let y = self.nodes[idx].value.clone();
                    for (j, gi) in g.iter().enumerate() {
                        grads[x.0][j] += gi * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Concat { xs } => {
                    let xs = xs.clone();
                    let mut offset = 0;
                    for x in xs {
                        let len = self.nodes[x.0].value.len();
                        for j in 0..len {
                            grads[x.0][j] += g[offset + j];
                        }
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let (x, start) = (*x, *start);
                    for (j, gi) in g.iter().enumerate() {
                        grads[x.0][start + j] += gi;
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (j, gi) in g.iter().enumerate() {
                        grads[a.0][j] += gi;
                    }
                    for (j, gi) in g.iter().enumerate() {
                        grads[b.0][j] += gi;
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    for (j, gi) in g.iter().enumerate() {
                        grads[a.0][j] += gi;
                    }
                    for (j, gi) in g.iter().enumerate() {
                        grads[b.0][j] -= gi;
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    for (j, gi) in g.iter().enumerate() {
                        grads[x.0][j] += gi * c;
                    }
                }
                Op::Sum { xs } => {
                    for x in xs.clone() {
                        grads[x.0][0] += g[0];
                    }
                }
                Op::SumSquares { x } => {
                    let x = *x;
                    let xv = self.nodes[x.0].value.clone();
                    for (j, xj) in xv.iter().enumerate() {
                        grads[x.0][j] += g[0] * 2.0 * xj;
                    }
                }
                Op::Mse { pred, target } => {
                    let pred = *pred;
                    let target = target.clone();
                    let n = target.len() as f64;
                    let pv = self.nodes[pred.0].value.clone();
                    for j in 0..target.len() {
                        grads[pred.0][j] += g[0] * 2.0 * (pv[j] - target[j]) / n;
                    }
                }
                Op::CrossEntropy { logits, target } => {
                    let (logits, target) = (*logits, *target);
                    let p = softmax(&self.nodes[logits.0].value);
                    for (j, pj) in p.iter().enumerate() {
                        let indicator = if j == target { 1.0 } else { 0.0 };
                        grads[logits.0][j] += g[0] * (pj - indicator);
                    }
                }
                Op::LogProb { logits, index } => {
                    let (logits, index) = (*logits, *index);
                    let p = softmax(&self.nodes[logits.0].value);
                    for (j, pj) in p.iter().enumerate() {
                        let indicator = if j == index { 1.0 } else { 0.0 };
                        grads[logits.0][j] += g[0] * (indicator - pj);
                    }
                }
                Op::Entropy { logits } => {
                    let logits = *logits;
                    let lp = log_softmax(&self.nodes[logits.0].value);
                    let h = self.nodes[idx].value[0];
                    // dH/dz_j = -p_j (log p_j + H)
                    for (j, lpj) in lp.iter().enumerate() {
                        grads[logits.0][j] += g[0] * (-(lpj.exp()) * (lpj + h));
                    }
                }
                Op::StraightThrough { x } => {
                    let x = *x;
                    for (j, gi) in g.iter().enumerate() {
                        grads[x.0][j] += gi;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>, shape: Vec<usize>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(shape, values);
        (s, id)
    }

    #[test]
    fn linear_identity() {
        let mut store = ParamStore::new();
        let w = store.add(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = store.add(vec![2], vec![0.0, 0.0]);
        let mut tape = Tape::new();
        let x = tape.input(&[3.0, -1.0]);
        let y = tape.linear(&store, w, b, x).unwrap();
        assert_eq!(tape.value(y), &[3.0, -1.0]);
    }

    #[test]
    fn linear_scale_and_bias() {
        let mut store = ParamStore::new();
        let w = store.add(vec![2, 2], vec![2.0, 0.0, 0.0, 2.0]);
        let b = store.add(vec![2], vec![1.0, 1.0]);
        let mut tape = Tape::new();
        let x = tape.input(&[1.0, 1.0]);
        let y = tape.linear(&store, w, b, x).unwrap();
        assert_eq!(tape.value(y), &[3.0, 3.0]);
    }

    #[test]
    fn linear_dimension_mismatch_is_config_error() {
        let mut store = ParamStore::new();
        let w = store.add(vec![2, 3], vec![0.0; 6]);
        let b = store.add(vec![2], vec![0.0; 2]);
        let mut tape = Tape::new();
        let x = tape.input(&[1.0, 2.0]);
        assert!(matches!(
            tape.linear(&store, w, b, x),
            Err(AimError::Config(_))
        ));
    }

    #[test]
    fn bias_gradient_of_sum_is_ones() {
        // Σᵢ (Wx + b)ᵢ realized as a second linear with fixed row (1, 1):
        // db = ones regardless of x.
        let mut store = ParamStore::new();
        let w = store.add(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = store.add(vec![2], vec![0.0, 0.0]);
        let w_sum = store.add(vec![1, 2], vec![1.0, 1.0]);
        let b_sum = store.add(vec![1], vec![0.0]);
        let mut tape = Tape::new();
        let x = tape.input(&[3.0, -1.0]);
        let y = tape.linear(&store, w, b, x).unwrap();
        let s = tape.linear(&store, w_sum, b_sum, y).unwrap();
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(b).grad, vec![1.0, 1.0]);
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::new();
        let p = tape.input(&[1.0, 1.0]);
        let l = tape.mse(p, &[1.0, 1.0]).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let mut tape = Tape::new();
        let p = tape.input(&[2.0, 0.0]);
        let l = tape.mse(p, &[0.0, 0.0]).unwrap();
        assert_eq!(tape.scalar(l), 2.0);
    }

    #[test]
    fn mse_gradient_through_parameter() {
        // prediction = param, target = (0,0): dL/dp = 2(p - t)/n = (2, 0)
        let (mut store, id) = store_with(vec![2.0, 0.0], vec![2]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let l = tape.mse(p, &[0.0, 0.0]).unwrap();
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad, vec![2.0, 0.0]);
    }

    #[test]
    fn mse_length_mismatch_is_config_error() {
        let mut tape = Tape::new();
        let p = tape.input(&[1.0]);
        assert!(matches!(tape.mse(p, &[1.0, 2.0]), Err(AimError::Config(_))));
    }

    #[test]
    fn sum_squares_gradient() {
        // loss = x² at x = 3 → dloss/dx = 6
        let (mut store, id) = store_with(vec![3.0], vec![1]);
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let l = tape.sum_squares(x);
        assert_eq!(tape.scalar(l), 9.0);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad, vec![6.0]);
    }

    #[test]
    fn gradients_accumulate_across_passes() {
        let (mut store, id) = store_with(vec![3.0], vec![1]);
        for _ in 0..2 {
            let mut tape = Tape::new();
            let x = tape.param(&store, id);
            let l = tape.sum_squares(x);
            tape.backward(l, &mut store).unwrap();
        }
        assert_eq!(store.get(id).grad, vec![12.0]);
    }

    #[test]
    fn cross_entropy_uniform_two_classes() {
        let mut tape = Tape::new();
        let logits = tape.input(&[0.3, 0.3]);
        let l = tape.cross_entropy(logits, 0).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let mut tape = Tape::new();
        let logits = tape.input(&[1000.0, -1000.0]);
        let l = tape.cross_entropy(logits, 0).unwrap();
        assert!(tape.scalar(l).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_hand_softmax() {
        // logits (0, ln 3): p0 = 1/4, loss for target 0 = ln 4
        let mut tape = Tape::new();
        let logits = tape.input(&[0.0, 3.0_f64.ln()]);
        let l = tape.cross_entropy(logits, 0).unwrap();
        assert!((tape.scalar(l) - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_index_out_of_range() {
        let mut tape = Tape::new();
        let logits = tape.input(&[0.0, 0.0]);
        assert!(matches!(
            tape.cross_entropy(logits, 2),
            Err(AimError::Config(_))
        ));
    }

    #[test]
    fn straight_through_copies_gradient() {
        // y = straight_through(x, q); loss = Σ y² → dloss/dx = 2q (copied)
        let (mut store, id) = store_with(vec![0.7], vec![1]);
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let y = tape.straight_through(x, &[2.0]);
        assert_eq!(tape.value(y), &[2.0]);
        let l = tape.sum_squares(y);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad, vec![4.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let (mut store, id) = store_with(vec![3.0], vec![1]);
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let d = tape.detach(x);
        let l = tape.sum_squares(d);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad, vec![0.0]);
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let mut probe = Tape::new();
        let v = probe.input(&[1.0]);
        let empty = Tape::new();
        let mut store = ParamStore::new();
        assert!(matches!(
            empty.backward(v, &mut store),
            Err(AimError::Usage(_))
        ));
    }

    #[test]
    fn backward_on_non_scalar_is_usage_error() {
        let mut tape = Tape::new();
        let v = tape.input(&[1.0, 2.0]);
        let mut store = ParamStore::new();
        assert!(matches!(
            tape.backward(v, &mut store),
            Err(AimError::Usage(_))
        ));
    }
}
