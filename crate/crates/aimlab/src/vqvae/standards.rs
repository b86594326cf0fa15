//! Training-data quality checker with pass/warn/fail bands per metric.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::{AimError, Result};

/// Outcome of one metric check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "pass"),
            Verdict::Warn => write!(f, "warn"),
            Verdict::Fail => write!(f, "fail"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricCheck {
    pub metric: String,
    pub value: f64,
    pub band: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct StandardsReport {
    pub rows: Vec<MetricCheck>,
}

impl StandardsReport {
    pub fn overall(&self) -> Verdict {
        let mut worst = Verdict::Pass;
        for r in &self.rows {
            worst = match (worst, r.verdict) {
                (_, Verdict::Fail) | (Verdict::Fail, _) => Verdict::Fail,
                (_, Verdict::Warn) | (Verdict::Warn, _) => Verdict::Warn,
                _ => Verdict::Pass,
            };
        }
        worst
    }

    pub fn row(&self, metric: &str) -> Option<&MetricCheck> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

impl std::fmt::Display for StandardsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<24} {:>12}  {:<6}  {}",
            "metric", "value", "check", "band"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<24} {:>12.5}  {:<6}  {}",
                r.metric, r.value, r.verdict, r.band
            )?;
        }
        write!(f, "overall: {}", self.overall())
    }
}

/// Band thresholds. Defaults follow the published table; the entropy
/// factors are configurable because the table only says "near
/// ln(K) x token count".
#[derive(Debug, Clone, Copy)]
pub struct StandardsBands {
    pub unique_pass: f64,
    pub unique_warn: f64,
    pub recon_pass: (f64, f64),
    pub recon_warn_max: f64,
    pub commit_pass: f64,
    pub commit_warn: f64,
    pub codebook_max: f64,
    pub entropy_pass_low: f64,
    pub entropy_warn_low: f64,
    pub avg_pass: (f64, f64),
    pub avg_warn_max: f64,
}

impl Default for StandardsBands {
    fn default() -> Self {
        Self {
            unique_pass: 0.60,
            unique_warn: 0.30,
            recon_pass: (0.08, 0.15),
            recon_warn_max: 0.2,
            commit_pass: 1.0,
            commit_warn: 1.2,
            codebook_max: 0.8,
            entropy_pass_low: 0.5,
            entropy_warn_low: 0.25,
            avg_pass: (0.5, 0.8),
            avg_warn_max: 1.0,
        }
    }
}

const REQUIRED: [&str; 6] = [
    "avg_unique_codes_ratio",
    "recon_loss",
    "commit_loss",
    "codebook_loss",
    "entropy_loss",
    "avg_loss",
];

/// Grades the six tracked quantities against the quality table.
/// `metrics` must contain all six keys; the optional `codebook_trend` key
/// carries the per-epoch slope of the codebook loss (missing = stable).
/// `tokens_per_batch` scales the entropy target ln(K) x tokens.
pub fn standards_check(
    metrics: &BTreeMap<String, f64>,
    k: usize,
    tokens_per_batch: usize,
    bands: &StandardsBands,
) -> Result<StandardsReport> {
    for key in REQUIRED {
        if !metrics.contains_key(key) {
            return Err(AimError::Config(format!(
                "standards check missing metric '{key}'"
            )));
        }
    }
    let get = |key: &str| metrics[key];
    let mut rows = Vec::new();

    let unique = get("avg_unique_codes_ratio");
    rows.push(MetricCheck {
        metric: "avg_unique_codes_ratio".into(),
        value: unique,
        band: format!(">={} pass, >={} warn", bands.unique_pass, bands.unique_warn),
        verdict: if unique >= bands.unique_pass {
            Verdict::Pass
        } else if unique >= bands.unique_warn {
            Verdict::Warn
        } else {
            Verdict::Fail
        },
    });

    let recon = get("recon_loss");
    let (rp_lo, rp_hi) = bands.recon_pass;
    rows.push(MetricCheck {
        metric: "recon_loss".into(),
        value: recon,
        band: format!("{rp_lo}..{rp_hi} pass, <={} warn", bands.recon_warn_max),
        verdict: if (rp_lo..=rp_hi).contains(&recon) {
            Verdict::Pass
        } else if recon <= bands.recon_warn_max {
            Verdict::Warn
        } else {
            Verdict::Fail
        },
    });

    let commit = get("commit_loss");
    rows.push(MetricCheck {
        metric: "commit_loss".into(),
        value: commit,
        band: format!("<{} pass, <{} warn", bands.commit_pass, bands.commit_warn),
        verdict: if commit < bands.commit_pass {
            Verdict::Pass
        } else if commit < bands.commit_warn {
            Verdict::Warn
        } else {
            Verdict::Fail
        },
    });

    let codebook = get("codebook_loss");
    let trend = metrics.get("codebook_trend").copied().unwrap_or(0.0);
    rows.push(MetricCheck {
        metric: "codebook_loss".into(),
        value: codebook,
        band: format!("<{} and non-increasing pass", bands.codebook_max),
        verdict: if codebook >= bands.codebook_max {
            Verdict::Fail
        } else if trend > 1e-6 {
            Verdict::Warn
        } else {
            Verdict::Pass
        },
    });

    let entropy = get("entropy_loss");
    let target = (k as f64).ln() * tokens_per_batch as f64;
    let ratio = if target > 0.0 { entropy / target } else { 0.0 };
    rows.push(MetricCheck {
        metric: "entropy_loss".into(),
        value: entropy,
        band: format!(
            "{:.2}..{:.2} of ln(K)*tokens = {target:.2}",
            bands.entropy_pass_low, 1.0
        ),
        verdict: if ratio >= bands.entropy_pass_low && ratio <= 1.0 + 1e-9 {
            Verdict::Pass
        } else if ratio >= bands.entropy_warn_low && ratio <= 1.05 {
            Verdict::Warn
        } else {
            Verdict::Fail
        },
    });

    let avg = get("avg_loss");
    let (ap_lo, ap_hi) = bands.avg_pass;
    rows.push(MetricCheck {
        metric: "avg_loss".into(),
        value: avg,
        band: format!("{ap_lo}..{ap_hi} pass, <={} warn", bands.avg_warn_max),
        verdict: if (ap_lo..=ap_hi).contains(&avg) {
            Verdict::Pass
        } else if avg > 0.0 && avg <= bands.avg_warn_max {
            Verdict::Warn
        } else {
            Verdict::Fail
        },
    });

    Ok(StandardsReport { rows })
}
