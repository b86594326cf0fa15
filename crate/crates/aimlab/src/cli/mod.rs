//! Command-line front end: `pretrain`, `train`, `analyze`, `compare`.
//!
//! Output directory resolution, for every command: `--out` beats the
//! `AIMLAB_OUT` environment variable, which beats the per-command default
//! (the config's `output.directory` for pretrain/train, the first input's
//! directory for analyze/compare). A manifest is written after all other
//! artifacts as the completion marker; reruns with the same config and seed
//! reproduce every artifact byte for byte, manifest timings aside.

mod config;
mod manifest;
mod reports;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::analysis::{frequency_spectrum, topology_projection, AimDictionary};
use crate::trainer::{train, train_baseline, RunLog, RunMode};
use crate::vqvae::{pretrain, Verdict, VqVae};
use crate::{AimError, Result};

pub use config::{DatasetKind, DatasetSection, OutputSection, RunConfigFile, TrainSection, VqSection};
pub use manifest::{sha256_file, sha256_hex, RunManifest};
pub use reports::{
    CompareRow, CONVERGENCE_THRESHOLD, CONVERGENCE_WINDOW, SPECTRUM_WINDOW, TRACE_WINDOW,
};

pub const VQVAE_CKPT: &str = "vqvae.ckpt";
pub const AGENTS_CKPT: &str = "agents.ckpt";
pub const AIM_RUNLOG: &str = "run_aim.jsonl";
pub const BASELINE_RUNLOG: &str = "run_baseline.jsonl";

#[derive(Debug, Parser)]
#[command(name = "aimlab", version, about = "Emergent-language lab: two agents invent a discrete code over a shared VQ-VAE codebook")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the VQ-VAE and report the codebook-usage standards.
    Pretrain {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the pretraining seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit nonzero when the standards verdict is a failure.
        #[arg(long)]
        strict: bool,
    },
    /// Train the agent pair against a pretrained codebook.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Message-as-action baseline: no codebook, no reflection heads.
        #[arg(long)]
        baseline: bool,
    },
    /// Emit the CSV/SVG report bundle for one run log.
    Analyze {
        runlog: PathBuf,
        /// VQ-VAE checkpoint; adds the codebook topology projection.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank two or more run logs by convergence and trailing reward.
    Compare {
        #[arg(required = true, num_args = 2..)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain {
            config,
            seed,
            out,
            strict,
        } => cmd_pretrain(config.as_deref(), seed, out, strict),
        Command::Train {
            config,
            seed,
            out,
            baseline,
        } => cmd_train(config.as_deref(), seed, out, baseline),
        Command::Analyze {
            runlog,
            checkpoint,
            out,
        } => cmd_analyze(&runlog, checkpoint.as_deref(), out),
        Command::Compare { logs, out } => cmd_compare(&logs, out),
    }
}

fn resolve_out(flag: Option<PathBuf>, default: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os("AIMLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| default.to_path_buf())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AimError::io(&dir.display().to_string(), e))
}

fn json_snapshot<T: serde::Serialize>(value: &T) -> Result<serde_json::Value> {
    serde_json::to_value(value).map_err(|e| AimError::Config(format!("unserializable config: {e}")))
}

/// Hashes the config-file dataset inputs when they are real files.
fn dataset_inputs(cfg: &RunConfigFile) -> Result<BTreeMap<String, String>> {
    let mut inputs = BTreeMap::new();
    if cfg.dataset.kind == DatasetKind::Idx {
        if let Some(p) = &cfg.dataset.images {
            inputs.insert("dataset.images".to_string(), manifest::sha256_file(p)?);
        }
        if let Some(p) = &cfg.dataset.labels {
            inputs.insert("dataset.labels".to_string(), manifest::sha256_file(p)?);
        }
    }
    Ok(inputs)
}

fn cmd_pretrain(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    strict: bool,
) -> Result<()> {
    let started = Instant::now();
    let cfg = RunConfigFile::load(config)?;
    let dir = resolve_out(out, &cfg.output.directory);
    ensure_dir(&dir)?;

    let dataset = cfg.build_dataset()?;
    let pre_cfg = cfg.pretrain_config(seed);
    let outcome = pretrain(&dataset, cfg.vq_config(), &pre_cfg)?;

    let ckpt_path = dir.join(VQVAE_CKPT);
    outcome.model.save(&ckpt_path)?;
    let report_path = dir.join("vqvae_standards.txt");
    let report_text = outcome.report.to_string();
    fs::write(&report_path, &report_text)
        .map_err(|e| AimError::io(&report_path.display().to_string(), e))?;

    let snapshot = serde_json::json!({
        "file": json_snapshot(&cfg)?,
        "pretrain": json_snapshot(&pre_cfg)?,
    });
    let mut manifest = RunManifest::new("pretrain", snapshot, dataset_inputs(&cfg)?);
    manifest.add_artifact("vqvae_checkpoint", &ckpt_path);
    manifest.add_artifact("standards_report", &report_path);
    manifest.seconds = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest_pretrain.json"))?;

    print!("{report_text}");
    println!("checkpoint: {}", ckpt_path.display());
    if strict && outcome.report.overall() == Verdict::Fail {
        return Err(AimError::Training {
            unit: "pretraining epoch",
            index: outcome.epochs.len(),
            message: "standards verdict is fail under --strict".into(),
        });
    }
    Ok(())
}

fn cmd_train(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    baseline: bool,
) -> Result<()> {
    let started = Instant::now();
    let cfg = RunConfigFile::load(config)?;
    let dir = resolve_out(out, &cfg.output.directory);
    ensure_dir(&dir)?;

    let mut train_cfg = cfg.train_config();
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    let dataset = cfg.build_dataset()?;
    let mut inputs = dataset_inputs(&cfg)?;

    let snapshot = serde_json::json!({
        "file": json_snapshot(&cfg)?,
        "train": json_snapshot(&train_cfg)?,
        "baseline": baseline,
    });

    let (log, log_path) = if baseline {
        let log_path = dir.join(BASELINE_RUNLOG);
        let log = train_baseline(&train_cfg, &dataset, Some(&log_path))?;
        (log, log_path)
    } else {
        let ckpt_path = dir.join(VQVAE_CKPT);
        if !ckpt_path.exists() {
            return Err(AimError::Usage(format!(
                "no VQ-VAE checkpoint at {}; run pretrain first",
                ckpt_path.display()
            )));
        }
        inputs.insert(
            "vqvae_checkpoint".to_string(),
            manifest::sha256_file(&ckpt_path)?,
        );
        let vqvae = VqVae::load(&ckpt_path)?;
        let log_path = dir.join(AIM_RUNLOG);
        let outcome = train(&train_cfg, &vqvae, &dataset, Some(&log_path))?;
        outcome.pair.save(&dir.join(AGENTS_CKPT))?;
        (outcome.log, log_path)
    };

    let mut manifest = RunManifest::new(
        if baseline { "train --baseline" } else { "train" },
        snapshot,
        inputs,
    );
    manifest.add_artifact("runlog", &log_path);
    if !baseline {
        manifest.add_artifact("agents_checkpoint", &dir.join(AGENTS_CKPT));
    }
    manifest.seconds = started.elapsed().as_secs_f64();
    manifest.write(&dir.join(if baseline {
        "manifest_baseline.json"
    } else {
        "manifest_train.json"
    }))?;

    let window = CONVERGENCE_WINDOW.min(log.len()).max(1);
    let trailing = log.trailing_mean_joint(window).unwrap_or(f64::NAN);
    let convergence = log
        .convergence_episode(window, CONVERGENCE_THRESHOLD)
        .map(|e| e.to_string())
        .unwrap_or_else(|| "-".to_string());
    println!(
        "{} episodes, trailing-{window} mean joint {:.3}, convergence {}",
        log.len(),
        trailing,
        convergence
    );
    println!("runlog: {}", log_path.display());
    Ok(())
}

fn cmd_analyze(runlog: &Path, checkpoint: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let started = Instant::now();
    let log = RunLog::load(runlog)?;
    if log.records.is_empty() {
        return Err(AimError::Usage(format!(
            "run log {} holds no episodes",
            runlog.display()
        )));
    }
    let parent = runlog
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let dir = resolve_out(out, &parent);
    ensure_dir(&dir)?;

    let episodes = log.len();
    let window_start = episodes.saturating_sub(SPECTRUM_WINDOW);
    let spectrum = frequency_spectrum(&log, window_start, episodes);
    let dictionary = AimDictionary::from_log(&log);
    let covariance = crate::analysis::policy_code_covariance(&log);

    let mut artifacts: Vec<(&str, PathBuf)> = Vec::new();
    let spectrum_path = dir.join("spectrum.csv");
    reports::spectrum_csv(&spectrum_path, &spectrum)?;
    artifacts.push(("spectrum", spectrum_path));

    let powerlaw_path = dir.join("powerlaw.csv");
    reports::powerlaw_csv(&powerlaw_path, &spectrum)?;
    artifacts.push(("powerlaw", powerlaw_path));

    let covariance_path = dir.join("covariance.csv");
    reports::covariance_csv(&covariance_path, &covariance)?;
    artifacts.push(("covariance", covariance_path));

    let trace_path = dir.join("trace.csv");
    reports::trace_csv(&trace_path, &log)?;
    artifacts.push(("trace", trace_path));

    let dictionary_path = dir.join("dictionary.csv");
    reports::dictionary_csv(&dictionary_path, &dictionary)?;
    artifacts.push(("dictionary", dictionary_path));

    let curve_path = dir.join("reward_curve.svg");
    reports::reward_curve_svg(&curve_path, &log)?;
    artifacts.push(("reward_curve", curve_path));

    let spectrum_svg_path = dir.join("spectrum.svg");
    reports::spectrum_svg(&spectrum_svg_path, &spectrum)?;
    artifacts.push(("spectrum_chart", spectrum_svg_path));

    let mut inputs = BTreeMap::from([("runlog".to_string(), manifest::sha256_file(runlog)?)]);
    if let Some(ckpt) = checkpoint {
        let vqvae = VqVae::load(ckpt)?;
        let lifetime = frequency_spectrum(&log, 0, episodes);
        let projection = topology_projection(&vqvae.codebook(), &lifetime)?;
        let topology_path = dir.join("topology.csv");
        reports::topology_csv(&topology_path, &projection)?;
        artifacts.push(("topology", topology_path));
        inputs.insert("vqvae_checkpoint".to_string(), manifest::sha256_file(ckpt)?);
    }

    let snapshot = serde_json::json!({
        "runlog": runlog.display().to_string(),
        "mode": match log.mode { RunMode::Aim => "aim", RunMode::Baseline => "baseline" },
        "episodes": episodes,
        "spectrum_window": [window_start, episodes],
    });
    let mut manifest = RunManifest::new("analyze", snapshot, inputs);
    for (role, path) in &artifacts {
        manifest.add_artifact(role, path);
    }
    manifest.seconds = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest_analyze.json"))?;

    match crate::analysis::fit_power_law(&spectrum) {
        Ok(fit) => println!(
            "power law over episodes {window_start}..{episodes}: alpha {:.3}, r^2 {:.3}",
            fit.alpha, fit.r_squared
        ),
        Err(AimError::InsufficientData(msg)) => println!("power law: insufficient data ({msg})"),
        Err(e) => return Err(e),
    }
    println!(
        "top-5 share {:.3}, distinct sequences {}",
        spectrum.top_share(5),
        spectrum.entries.len()
    );
    println!("reports in {}", dir.display());
    Ok(())
}

fn cmd_compare(logs: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    if logs.len() < 2 {
        return Err(AimError::Usage("compare needs at least two run logs".into()));
    }
    let mut rows = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for path in logs {
        let log = RunLog::load(path)?;
        if log.records.is_empty() {
            return Err(AimError::Usage(format!(
                "run log {} holds no episodes",
                path.display()
            )));
        }
        let this = (log.config.k, log.config.l);
        match shape {
            None => shape = Some(this),
            Some(first) if first != this => {
                return Err(AimError::Usage(format!(
                    "incompatible run logs: {} uses K={} L={}, expected K={} L={}",
                    path.display(),
                    this.0,
                    this.1,
                    first.0,
                    first.1
                )))
            }
            Some(_) => {}
        }
        rows.push(CompareRow::from_log(&path.display().to_string(), &log));
    }
    reports::rank_rows(&mut rows);

    let parent = logs[0]
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let dir = resolve_out(out, &parent);
    ensure_dir(&dir)?;
    let csv_path = dir.join("comparison.csv");
    reports::comparison_csv(&csv_path, &rows)?;

    print!("{}", reports::comparison_table(&rows));
    println!("table: {}", csv_path.display());
    Ok(())
}
