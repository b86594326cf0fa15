//! Shared discrete symbol system: encoder, nearest-neighbor quantizer over
//! a learned codebook, decoder, the three quantization losses, the
//! pretraining loop, and the training-standards checker.

mod checkpoint;
mod pretrain;
mod standards;

pub use checkpoint::Checkpoint;
pub use pretrain::{pretrain, EpochStats, PretrainConfig, PretrainOutcome};
pub use standards::{
    standards_check, MetricCheck, StandardsBands, StandardsReport, Verdict,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Mlp, ParamId, ParamStore, Tape, VarId};
use crate::{AimError, Result};

/// Fixed-length sequence of codebook indices; the unit of communication.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AimSequence {
    pub tokens: Vec<usize>,
}

impl AimSequence {
    pub fn validate(&self, l: usize, k: usize) -> Result<()> {
        if self.tokens.len() != l {
            return Err(AimError::Config(format!(
                "aim sequence length {} does not match configured L = {l}",
                self.tokens.len()
            )));
        }
        if let Some(t) = self.tokens.iter().find(|t| **t >= k) {
            return Err(AimError::Config(format!(
                "aim token {t} out of range for codebook size {k}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for AimSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.tokens.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// The K×D table of prototype vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub k: usize,
    pub d: usize,
    pub vectors: Vec<f64>,
}

impl Codebook {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    /// Finiteness plus pairwise distinctness of rows.
    pub fn validate(&self) -> Result<()> {
        if self.vectors.len() != self.k * self.d {
            return Err(AimError::Config(format!(
                "codebook has {} entries, expected {}x{}",
                self.vectors.len(),
                self.k,
                self.d
            )));
        }
        if self.vectors.iter().any(|v| !v.is_finite()) {
            return Err(AimError::Numerical("non-finite codebook entry".into()));
        }
        for a in 0..self.k {
            for b in (a + 1)..self.k {
                let d2: f64 = self
                    .row(a)
                    .iter()
                    .zip(self.row(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if d2 <= 1e-24 {
                    return Err(AimError::Numerical(format!(
                        "codebook rows {a} and {b} coincide"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The three quantization-training losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VqLosses {
    pub recon: f64,
    pub commit: f64,
    pub codebook: f64,
}

/// Architecture hyperparameters of the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqConfig {
    pub k: usize,
    pub d: usize,
    pub l: usize,
    pub beta: f64,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            k: 64,
            d: 8,
            l: 2,
            beta: 0.25,
            input_dim: 256,
            hidden: 128,
        }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(AimError::Config("codebook size K must be at least 2".into()));
        }
        if self.d == 0 || self.l == 0 || self.input_dim == 0 || self.hidden == 0 {
            return Err(AimError::Config(
                "D, L, input_dim and hidden must all be positive".into(),
            ));
        }
        if !(self.beta > 0.0) {
            return Err(AimError::Config(format!(
                "commitment weight beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// index = argmin over rows of squared distance to z_e; ties go to the
/// lowest index. Returns the index and a copy of the selected row.
pub fn quantize(z_e: &[f64], codebook: &Codebook) -> Result<(usize, Vec<f64>)> {
    if z_e.len() != codebook.d {
        return Err(AimError::Config(format!(
            "latent dimension {} does not match codebook dimension {}",
            z_e.len(),
            codebook.d
        )));
    }
    if codebook.k == 0 {
        return Err(AimError::Config("empty codebook".into()));
    }
    let mut best = 0usize;
    let mut best_d2 = f64::INFINITY;
    for i in 0..codebook.k {
        let d2: f64 = codebook
            .row(i)
            .iter()
            .zip(z_e)
            .map(|(e, z)| (e - z) * (e - z))
            .sum();
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    Ok((best, codebook.row(best).to_vec()))
}

/// Computes the three losses from raw values. `z_e` and `z_q` are the
/// concatenated L slots. The squared quantization gap is averaged over
/// slots, not over vector entries.
pub fn vq_losses(
    x: &[f64],
    x_hat: &[f64],
    z_e: &[f64],
    z_q: &[f64],
    l: usize,
    beta: f64,
) -> Result<VqLosses> {
    if x.len() != x_hat.len() {
        return Err(AimError::Config(format!(
            "reconstruction length {} does not match input length {}",
            x_hat.len(),
            x.len()
        )));
    }
    if z_e.len() != z_q.len() || l == 0 || z_e.len() % l != 0 {
        return Err(AimError::Config(
            "latent slots malformed: z_e and z_q must share an L-divisible length".into(),
        ));
    }
    let recon = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    let gap = z_e
        .iter()
        .zip(z_q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / l as f64;
    Ok(VqLosses {
        recon,
        commit: beta * gap,
        codebook: gap,
    })
}

/// Per-sample training-pass handles plus the tokens it produced.
pub(crate) struct TrainForward {
    pub recon: VarId,
    pub codebook_loss: VarId,
    pub commit_loss: VarId,
    pub tokens: Vec<usize>,
}

/// Encoder, codebook and decoder with their parameter store.
#[derive(Debug, Clone)]
pub struct VqVae {
    cfg: VqConfig,
    store: ParamStore,
    encoder: Mlp,
    decoder: Mlp,
    codebook_id: ParamId,
}

impl VqVae {
    pub fn new<R: Rng>(cfg: VqConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let encoder = Mlp::new(
            &mut store,
            rng,
            &[cfg.input_dim, cfg.hidden, cfg.l * cfg.d],
            Activation::Tanh,
            Activation::Identity,
        );
        let decoder = Mlp::new(
            &mut store,
            rng,
            &[cfg.l * cfg.d, cfg.hidden, cfg.input_dim],
            Activation::Tanh,
            Activation::Sigmoid,
        );
        // Small spread keeps early quantization from locking onto one row.
        let spread = 1.0 / cfg.k as f64;
        let values: Vec<f64> = (0..cfg.k * cfg.d)
            .map(|_| rng.random_range(-spread..spread))
            .collect();
        let codebook_id = store.add(vec![cfg.k, cfg.d], values);
        Ok(Self {
            cfg,
            store,
            encoder,
            decoder,
            codebook_id,
        })
    }

    pub fn config(&self) -> &VqConfig {
        &self.cfg
    }

    pub fn codebook(&self) -> Codebook {
        Codebook {
            k: self.cfg.k,
            d: self.cfg.d,
            vectors: self.store.get(self.codebook_id).values.clone(),
        }
    }

    /// Hash of every parameter value; changes iff any weight changes.
    pub fn value_fingerprint(&self) -> u64 {
        self.store.value_fingerprint()
    }

    /// Continuous latent of length L·D.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cfg.input_dim {
            return Err(AimError::Config(format!(
                "image has {} pixels, model expects {}",
                x.len(),
                self.cfg.input_dim
            )));
        }
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let z = self.encoder.forward(&mut tape, &self.store, xv)?;
        Ok(tape.value(z).to_vec())
    }

    /// Quantizes each of the L latent slots independently.
    pub fn encode_to_aim(&self, x: &[f64]) -> Result<AimSequence> {
        let z_e = self.encode(x)?;
        let cb = self.codebook();
        let mut tokens = Vec::with_capacity(self.cfg.l);
        for slot in z_e.chunks_exact(self.cfg.d) {
            let (idx, _) = quantize(slot, &cb)?;
            tokens.push(idx);
        }
        Ok(AimSequence { tokens })
    }

    /// Image from a concatenated L·D quantized latent; sigmoid output keeps
    /// every pixel in [0,1].
    pub fn decode(&self, z_q: &[f64]) -> Result<Vec<f64>> {
        if z_q.len() != self.cfg.l * self.cfg.d {
            return Err(AimError::Config(format!(
                "latent has {} entries, model expects {}",
                z_q.len(),
                self.cfg.l * self.cfg.d
            )));
        }
        let mut tape = Tape::new();
        let zv = tape.input(z_q);
        let y = self.decoder.forward(&mut tape, &self.store, zv)?;
        Ok(tape.value(y).to_vec())
    }

    /// encode → quantize → decode.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z_e = self.encode(x)?;
        let cb = self.codebook();
        let mut z_q = Vec::with_capacity(z_e.len());
        for slot in z_e.chunks_exact(self.cfg.d) {
            let (_, row) = quantize(slot, &cb)?;
            z_q.extend(row);
        }
        self.decode(&z_q)
    }

    /// One sample's differentiable pass. The reconstruction gradient is
    /// copied across the argmin (straight-through); the codebook term moves
    /// only the selected rows; the commitment term moves only the encoder.
    pub(crate) fn train_forward(&self, tape: &mut Tape, x: &[f64]) -> Result<TrainForward> {
        let cb = self.codebook();
        let xv = tape.input(x);
        let z_flat = self.encoder.forward(tape, &self.store, xv)?;
        let mut tokens = Vec::with_capacity(self.cfg.l);
        let mut quantized = Vec::with_capacity(self.cfg.l);
        let mut cb_terms = Vec::with_capacity(self.cfg.l);
        let mut commit_terms = Vec::with_capacity(self.cfg.l);
        for slot in 0..self.cfg.l {
            let z_slot = tape.slice(z_flat, slot * self.cfg.d, self.cfg.d);
            let z_val = tape.value(z_slot).to_vec();
            let (idx, row) = quantize(&z_val, &cb)?;
            tokens.push(idx);
            quantized.push(tape.straight_through(z_slot, &row));

            let e_row = tape.param_row(&self.store, self.codebook_id, idx);
            let z_const = tape.input(&z_val);
            let cb_diff = tape.sub(e_row, z_const);
            cb_terms.push(tape.sum_squares(cb_diff));

            let row_const = tape.input(&row);
            let commit_diff = tape.sub(z_slot, row_const);
            commit_terms.push(tape.sum_squares(commit_diff));
        }
        let z_q = tape.concat(&quantized);
        let x_hat = self.decoder.forward(tape, &self.store, z_q)?;
        let recon = tape.mse(x_hat, x)?;
        let cb_sum = tape.sum(&cb_terms);
        let codebook_loss = tape.scale(cb_sum, 1.0 / self.cfg.l as f64);
        let commit_sum = tape.sum(&commit_terms);
        let commit_loss = tape.scale(commit_sum, self.cfg.beta / self.cfg.l as f64);
        Ok(TrainForward {
            recon,
            codebook_loss,
            commit_loss,
            tokens,
        })
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn all_params(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.params();
        ids.extend(self.decoder.params());
        ids.push(self.codebook_id);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> VqVae {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VqVae::new(
            VqConfig {
                k: 16,
                d: 4,
                l: 2,
                beta: 0.25,
                input_dim: 36,
                hidden: 24,
            },
            &mut rng,
        )
        .unwrap()
    }

    fn random_image<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn quantize_nearest_by_hand() {
        let cb = Codebook {
            k: 2,
            d: 2,
            vectors: vec![0.0, 0.0, 1.0, 1.0],
        };
        let (idx, zq) = quantize(&[0.2, 0.1], &cb).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(zq, vec![0.0, 0.0]);
    }

    #[test]
    fn quantize_exact_row_hit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vectors: Vec<f64> = (0..8 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cb = Codebook {
            k: 8,
            d: 3,
            vectors,
        };
        let target = cb.row(3).to_vec();
        let (idx, zq) = quantize(&target, &cb).unwrap();
        assert_eq!(idx, 3);
        assert_eq!(zq, target);
    }

    #[test]
    fn quantize_matches_brute_force_oracle() {
        // Oracle: enumerate all (distance, index) pairs and take the
        // lexicographic minimum, computed with a different accumulation
        // order than the implementation.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 64;
        let d = 8;
        let vectors: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cb = Codebook { k, d, vectors };
        for _ in 0..1000 {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (idx, zq) = quantize(&z, &cb).unwrap();
            let oracle = (0..k)
                .map(|i| {
                    let mut d2 = 0.0;
                    for j in (0..d).rev() {
                        let diff = cb.row(i)[j] - z[j];
                        d2 += diff * diff;
                    }
                    (d2, i)
                })
                .min_by(|a, b| a.partial_cmp(b).unwrap())
                .unwrap()
                .1;
            assert_eq!(idx, oracle);
            assert_eq!(zq, cb.row(idx).to_vec());
        }
    }

    #[test]
    fn quantize_ties_break_to_lowest_index() {
        let cb = Codebook {
            k: 3,
            d: 2,
            vectors: vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0],
        };
        // equidistant from rows 0 and 2 (identical) and row 1
        let (idx, _) = quantize(&[0.0, 0.0], &cb).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn quantize_dimension_mismatch() {
        let cb = Codebook {
            k: 2,
            d: 2,
            vectors: vec![0.0; 4],
        };
        assert!(matches!(
            quantize(&[1.0, 2.0, 3.0], &cb),
            Err(AimError::Config(_))
        ));
    }

    #[test]
    fn codebook_validate_rejects_duplicate_rows() {
        let cb = Codebook {
            k: 2,
            d: 2,
            vectors: vec![0.5, 0.5, 0.5, 0.5],
        };
        assert!(cb.validate().is_err());
    }

    #[test]
    fn encode_is_deterministic_with_configured_width() {
        let model = small_model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(36, &mut rng);
        let a = model.encode(&x).unwrap();
        let b = model.encode(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert!(matches!(
            model.encode(&[0.0; 10]),
            Err(AimError::Config(_))
        ));
    }

    #[test]
    fn encode_to_aim_tokens_in_range() {
        let model = small_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = random_image(36, &mut rng);
            let aim = model.encode_to_aim(&x).unwrap();
            assert_eq!(aim.tokens.len(), 2);
            assert!(aim.tokens.iter().all(|t| *t < 16));
        }
    }

    #[test]
    fn single_slot_encoding_reduces_to_quantized_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = VqVae::new(
            VqConfig {
                k: 8,
                d: 4,
                l: 1,
                beta: 0.25,
                input_dim: 16,
                hidden: 12,
            },
            &mut rng,
        )
        .unwrap();
        let x = random_image(16, &mut rng);
        let aim = model.encode_to_aim(&x).unwrap();
        let z_e = model.encode(&x).unwrap();
        let (idx, _) = quantize(&z_e, &model.codebook()).unwrap();
        assert_eq!(aim.tokens, vec![idx]);
    }

    #[test]
    fn decode_output_in_unit_interval_with_input_shape() {
        let model = small_model(9);
        let out = model.decode(&[0.3; 8]).unwrap();
        assert_eq!(out.len(), 36);
        assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(matches!(model.decode(&[0.0; 5]), Err(AimError::Config(_))));
    }

    #[test]
    fn vq_losses_zero_when_everything_matches() {
        let l = vq_losses(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 2.0], &[1.0, 2.0], 1, 0.25).unwrap();
        assert_eq!(
            l,
            VqLosses {
                recon: 0.0,
                commit: 0.0,
                codebook: 0.0
            }
        );
    }

    #[test]
    fn vq_losses_hand_case() {
        let l = vq_losses(&[0.0], &[0.0], &[1.0, 0.0], &[0.0, 0.0], 1, 0.25).unwrap();
        assert_eq!(l.codebook, 1.0);
        assert_eq!(l.commit, 0.25);
    }

    #[test]
    fn commit_to_codebook_ratio_is_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let z_e: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let z_q: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let beta = rng.random_range(0.05..0.9);
            let l = vq_losses(&[0.1], &[0.2], &z_e, &z_q, 2, beta).unwrap();
            if l.codebook > 0.0 {
                assert!((l.commit / l.codebook - beta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn straight_through_moves_encoder_despite_argmin() {
        let mut model = small_model(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_image(36, &mut rng);
        let mut tape = Tape::new();
        let fwd = model.train_forward(&mut tape, &x).unwrap();
        tape.backward(fwd.recon, &mut model.store).unwrap();
        let enc_grad: f64 = model
            .encoder
            .params()
            .iter()
            .flat_map(|id| model.store.get(*id).grad.iter())
            .map(|g| g * g)
            .sum();
        assert!(enc_grad > 0.0, "reconstruction gradient never reached the encoder");
    }

    #[test]
    fn commit_term_moves_encoder_not_codebook() {
        let mut model = small_model(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_image(36, &mut rng);
        let mut tape = Tape::new();
        let fwd = model.train_forward(&mut tape, &x).unwrap();
        tape.backward(fwd.commit_loss, &mut model.store).unwrap();
        let cb_grad: f64 = model
            .store
            .get(model.codebook_id)
            .grad
            .iter()
            .map(|g| g * g)
            .sum();
        assert_eq!(cb_grad, 0.0);
    }

    #[test]
    fn codebook_term_moves_codebook_not_encoder() {
        let mut model = small_model(15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_image(36, &mut rng);
        let mut tape = Tape::new();
        let fwd = model.train_forward(&mut tape, &x).unwrap();
        tape.backward(fwd.codebook_loss, &mut model.store).unwrap();
        let enc_grad: f64 = model
            .encoder
            .params()
            .iter()
            .flat_map(|id| model.store.get(*id).grad.iter())
            .map(|g| g * g)
            .sum();
        assert_eq!(enc_grad, 0.0);
        let cb_grad: f64 = model
            .store
            .get(model.codebook_id)
            .grad
            .iter()
            .map(|g| g * g)
            .sum();
        assert!(cb_grad > 0.0);
    }

    #[test]
    fn train_forward_losses_match_plain_computation() {
        let model = small_model(17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = random_image(36, &mut rng);
        let mut tape = Tape::new();
        let fwd = model.train_forward(&mut tape, &x).unwrap();

        let z_e = model.encode(&x).unwrap();
        let cb = model.codebook();
        let mut z_q = Vec::new();
        for slot in z_e.chunks_exact(4) {
            let (_, row) = quantize(slot, &cb).unwrap();
            z_q.extend(row);
        }
        let x_hat = model.decode(&z_q).unwrap();
        let plain = vq_losses(&x, &x_hat, &z_e, &z_q, 2, 0.25).unwrap();
        assert!((tape.scalar(fwd.recon) - plain.recon).abs() < 1e-12);
        assert!((tape.scalar(fwd.codebook_loss) - plain.codebook).abs() < 1e-12);
        assert!((tape.scalar(fwd.commit_loss) - plain.commit).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bad in [
            VqConfig {
                k: 1,
                ..VqConfig::default()
            },
            VqConfig {
                beta: 0.0,
                ..VqConfig::default()
            },
            VqConfig {
                l: 0,
                ..VqConfig::default()
            },
        ] {
            assert!(VqVae::new(bad, &mut rng).is_err());
        }
    }
}
