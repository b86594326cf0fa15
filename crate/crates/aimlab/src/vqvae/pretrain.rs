//! Seeded autoencoder pretraining over a labeled image dataset.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::standards::{standards_check, StandardsBands, StandardsReport};
use super::{VqConfig, VqVae};
use crate::diffcore::{Optimizer, Tape, UpdateRule};
use crate::env::Dataset;
use crate::{AimError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// Per-epoch aggregates, written to the pretraining run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub recon: f64,
    pub commit: f64,
    pub codebook: f64,
    pub avg_loss: f64,
    /// Mean over batches of (distinct codes used in batch) / K.
    pub unique_ratio: f64,
    /// Entropy of the epoch's code-usage histogram, in nats.
    pub usage_entropy: f64,
}

pub struct PretrainOutcome {
    pub model: VqVae,
    pub report: StandardsReport,
    pub epochs: Vec<EpochStats>,
}

pub fn pretrain(
    dataset: &Dataset,
    vq_cfg: VqConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if dataset.is_empty() {
        return Err(AimError::Config("cannot pretrain on an empty dataset".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(AimError::Config(
            "pretraining needs at least one epoch and a positive batch size".into(),
        ));
    }
    if !(cfg.lr > 0.0) {
        return Err(AimError::Config(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vq_cfg = VqConfig {
        input_dim: dataset.pixel_dim(),
        ..vq_cfg
    };
    let mut model = VqVae::new(vq_cfg, &mut rng)?;
    let params = model.all_params();
    let mut opt = Optimizer::new(UpdateRule::adam(cfg.lr));

    let k = vq_cfg.k;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs_out = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut sum_recon = 0.0;
        let mut sum_commit = 0.0;
        let mut sum_codebook = 0.0;
        let mut histogram = vec![0u64; k];
        let mut unique_ratio_sum = 0.0;
        let mut batch_count = 0usize;

        for batch in indices.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut seen = vec![false; k];
            for &i in batch {
                let mut tape = Tape::new();
                let fwd = model.train_forward(&mut tape, dataset.image(i))?;
                sum_recon += tape.scalar(fwd.recon);
                sum_commit += tape.scalar(fwd.commit_loss);
                sum_codebook += tape.scalar(fwd.codebook_loss);
                for &t in &fwd.tokens {
                    histogram[t] += 1;
                    seen[t] = true;
                }
                let total = tape.sum(&[fwd.recon, fwd.codebook_loss, fwd.commit_loss]);
                let scaled = tape.scale(total, scale);
                tape.backward(scaled, model.store_mut())?;
            }
            opt.step(model.store_mut(), &params);
            unique_ratio_sum += seen.iter().filter(|s| **s).count() as f64 / k as f64;
            batch_count += 1;
        }

        let n = dataset.len() as f64;
        let stats = EpochStats {
            epoch,
            recon: sum_recon / n,
            commit: sum_commit / n,
            codebook: sum_codebook / n,
            avg_loss: (sum_recon + sum_commit + sum_codebook) / n,
            unique_ratio: unique_ratio_sum / batch_count as f64,
            usage_entropy: histogram_entropy(&histogram),
        };
        if !(stats.recon.is_finite() && stats.commit.is_finite() && stats.codebook.is_finite()) {
            return Err(AimError::Training {
                unit: "epoch",
                index: epoch,
                message: "non-finite quantization loss".into(),
            });
        }
        epochs_out.push(stats);
    }

    let last = *epochs_out.last().expect("at least one epoch");
    let tokens_per_batch = cfg.batch_size * vq_cfg.l;
    let mut metrics = BTreeMap::new();
    metrics.insert("avg_unique_codes_ratio".to_string(), last.unique_ratio);
    metrics.insert("recon_loss".to_string(), last.recon);
    metrics.insert("commit_loss".to_string(), last.commit);
    metrics.insert("codebook_loss".to_string(), last.codebook);
    metrics.insert(
        "entropy_loss".to_string(),
        last.usage_entropy * tokens_per_batch as f64,
    );
    metrics.insert("avg_loss".to_string(), last.avg_loss);
    metrics.insert(
        "codebook_trend".to_string(),
        slope(epochs_out.iter().map(|e| e.codebook)),
    );
    let report = standards_check(&metrics, k, tokens_per_batch, &StandardsBands::default())?;

    Ok(PretrainOutcome {
        model,
        report,
        epochs: epochs_out,
    })
}

fn histogram_entropy(histogram: &[u64]) -> f64 {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return 0.0;
    }
    histogram
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// Least-squares slope of y over equally spaced steps.
fn slope(ys: impl Iterator<Item = f64>) -> f64 {
    let ys: Vec<f64> = ys.collect();
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    num / den
}
