//! Rank-frequency power-law fitting.

use serde::Serialize;

use super::FrequencySpectrum;
use crate::{AimError, Result};

/// Least-squares fit of `log(count) = intercept - alpha * log(rank)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits over explicit (rank, count) points. Points with a non-positive rank
/// or count are dropped; at least 3 must survive. When every log-count is
/// identical the data is fit perfectly by a constant, so `r_squared` is 1
/// by convention.
pub fn fit_power_law_points(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(rank, count)| *rank > 0.0 && *count > 0.0)
        .map(|(rank, count)| (rank.ln(), count.ln()))
        .collect();
    if logs.len() < 3 {
        return Err(AimError::InsufficientData(format!(
            "power-law fit needs at least 3 positive (rank, count) points, got {}",
            logs.len()
        )));
    }
    let n = logs.len() as f64;
    let x_mean = logs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let y_mean = logs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in &logs {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
        syy += (y - y_mean) * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(AimError::InsufficientData(
            "power-law fit needs at least 2 distinct ranks".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let r_squared = if syy <= 1e-300 {
        1.0
    } else {
        let sse: f64 = logs
            .iter()
            .map(|(x, y)| {
                let e = y - (intercept + slope * x);
                e * e
            })
            .sum();
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(PowerLawFit {
        alpha: -slope,
        intercept,
        r_squared,
    })
}

/// Fits a spectrum at competition ranks: each entry's rank is one plus the
/// number of entries with a strictly greater count, so tied counts share a
/// rank instead of being spread across consecutive positions.
pub fn fit_power_law(spectrum: &FrequencySpectrum) -> Result<PowerLawFit> {
    let points: Vec<(f64, f64)> = spectrum
        .entries
        .iter()
        .map(|(_, count)| {
            let rank = 1 + spectrum
                .entries
                .iter()
                .filter(|(_, other)| other > count)
                .count();
            (rank as f64, *count as f64)
        })
        .collect();
    fit_power_law_points(&points)
}
