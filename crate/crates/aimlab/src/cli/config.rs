//! Run configuration file: one TOML document with `[vqvae]`, `[train]`,
//! `[dataset]`, and `[output]` sections. Every field has a default, so an
//! absent file or empty document is a valid configuration. Unknown keys are
//! rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::Dataset;
use crate::trainer::{ContextSource, Strategy, TrainConfig};
use crate::vqvae::{PretrainConfig, VqConfig};
use crate::{AimError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqSection {
    pub k: usize,
    pub d: usize,
    pub l: usize,
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for VqSection {
    fn default() -> Self {
        let vq = VqConfig::default();
        let pre = PretrainConfig::default();
        Self {
            k: vq.k,
            d: vq.d,
            l: vq.l,
            beta: vq.beta,
            epochs: pre.epochs,
            lr: pre.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda_entropy: f64,
    pub lambda_reflect: f64,
    pub strategy: Strategy,
    pub context_source: ContextSource,
    pub seed: u64,
    pub b_value_head: bool,
    pub opponent_aim_loss: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            episodes: t.episodes,
            batch: t.batch_size,
            lr: t.lr,
            lambda_entropy: t.lambda_entropy,
            lambda_reflect: t.lambda_reflect,
            strategy: t.strategy,
            context_source: t.context_source,
            seed: t.seed,
            b_value_head: t.b_value_head,
            opponent_aim_loss: t.opponent_aim_loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Glyphs per digit class when kind = synthetic.
    pub count: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            images: None,
            labels: None,
            count: 48,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub vqvae: VqSection,
    pub train: TrainSection,
    pub dataset: DatasetSection,
    pub output: OutputSection,
}

impl RunConfigFile {
    /// Parses a TOML file, or yields the all-defaults configuration when no
    /// path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| AimError::io(&p.display().to_string(), e))?;
                toml::from_str(&text).map_err(|e| {
                    AimError::Config(format!("{}: {}", p.display(), e.message()))
                })?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.dataset.kind == DatasetKind::Idx {
            for (field, path) in [
                ("dataset.images", &self.dataset.images),
                ("dataset.labels", &self.dataset.labels),
            ] {
                match path {
                    None => {
                        return Err(AimError::Usage(format!(
                            "{field} is required when dataset.kind = \"idx\""
                        )))
                    }
                    Some(p) if !p.exists() => {
                        return Err(AimError::Usage(format!(
                            "{field} does not exist: {}",
                            p.display()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        if self.dataset.kind == DatasetKind::Synthetic && self.dataset.count == 0 {
            return Err(AimError::Usage(
                "dataset.count must be at least 1 for a synthetic dataset".into(),
            ));
        }
        self.vq_config().validate()?;
        self.train_config().validate()
    }

    pub fn vq_config(&self) -> VqConfig {
        VqConfig {
            k: self.vqvae.k,
            d: self.vqvae.d,
            l: self.vqvae.l,
            beta: self.vqvae.beta,
            ..VqConfig::default()
        }
    }

    pub fn pretrain_config(&self, seed_override: Option<u64>) -> PretrainConfig {
        let base = PretrainConfig::default();
        PretrainConfig {
            epochs: self.vqvae.epochs,
            lr: self.vqvae.lr,
            seed: seed_override.unwrap_or(base.seed),
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.train.episodes,
            seed: self.train.seed,
            lr: self.train.lr,
            lambda_entropy: self.train.lambda_entropy,
            lambda_reflect: self.train.lambda_reflect,
            strategy: self.train.strategy,
            k: self.vqvae.k,
            d: self.vqvae.d,
            l: self.vqvae.l,
            batch_size: self.train.batch,
            context_source: self.train.context_source,
            b_value_head: self.train.b_value_head,
            opponent_aim_loss: self.train.opponent_aim_loss,
        }
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        match self.dataset.kind {
            DatasetKind::Synthetic => {
                Ok(Dataset::synthetic(self.dataset.seed, self.dataset.count))
            }
            DatasetKind::Idx => {
                let images = self.dataset.images.as_ref().expect("validated at load");
                let labels = self.dataset.labels.as_ref().expect("validated at load");
                Dataset::load_idx(images, labels)
            }
        }
    }
}
