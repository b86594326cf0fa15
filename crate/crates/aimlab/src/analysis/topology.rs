//! 2D view of the codebook geometry.
//!
//! Principal components of the centered codebook rows give a deterministic
//! planar layout; spectrum counts decorate each code with how much it was
//! actually spoken. The eigensolver is a cyclic Jacobi sweep, plenty for the
//! small symmetric matrices a codebook produces.

use serde::Serialize;

use super::FrequencySpectrum;
use crate::vqvae::Codebook;
use crate::{AimError, Result};

/// One codebook row in the projected plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectedCode {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    /// This code's share of all token slots in the spectrum, in [0,1].
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyProjection {
    pub points: Vec<ProjectedCode>,
    /// Fraction of total row variance the two components carry; 0 when the
    /// codebook is degenerate.
    pub variance_captured: f64,
    /// True when all rows coincide, leaving nothing to project.
    pub degenerate: bool,
}

/// Eigenvalues (descending) and matching unit eigenvectors of a symmetric
/// matrix, by cyclic Jacobi rotations. Each eigenvector's largest-magnitude
/// entry is made positive (first such entry on magnitude ties) so reruns and
/// reflections cannot flip signs.
pub(crate) fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|x| x * x))
        .sum::<f64>()
        .sqrt()
        .max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    1.0 / (theta - (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p][j];
                    let aqj = a[q][j];
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for row in v.iter_mut() {
                    let vip = row[p];
                    let viq = row[q];
                    row[p] = c * vip - s * viq;
                    row[q] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).expect("finite eigenvalues"));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let mut eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| (0..n).map(|row| v[row][col]).collect())
        .collect();
    for vec in eigenvectors.iter_mut() {
        let mut lead = 0;
        for (i, x) in vec.iter().enumerate() {
            if x.abs() > vec[lead].abs() {
                lead = i;
            }
        }
        if vec[lead] < 0.0 {
            for x in vec.iter_mut() {
                *x = -*x;
            }
        }
    }
    (eigenvalues, eigenvectors)
}

fn usage_weights(k: usize, usage: &FrequencySpectrum) -> Vec<f64> {
    let mut occurrences = vec![0usize; k];
    let mut total = 0usize;
    for (seq, count) in &usage.entries {
        for &token in &seq.tokens {
            if token < k {
                occurrences[token] += count;
            }
            total += count;
        }
    }
    if total == 0 {
        return vec![0.0; k];
    }
    occurrences
        .into_iter()
        .map(|o| o as f64 / total as f64)
        .collect()
}

/// Projects the codebook rows onto their top two principal components.
/// Coordinates are the centered rows' dot products with unit eigenvectors of
/// the row covariance, so the layout is deterministic given the codebook.
pub fn topology_projection(
    codebook: &Codebook,
    usage: &FrequencySpectrum,
) -> Result<TopologyProjection> {
    if codebook.k < 2 {
        return Err(AimError::Usage(format!(
            "topology projection needs at least 2 codes, got {}",
            codebook.k
        )));
    }
    if codebook.vectors.len() != codebook.k * codebook.d {
        return Err(AimError::Config(format!(
            "codebook has {} values, expected {}x{}",
            codebook.vectors.len(),
            codebook.k,
            codebook.d
        )));
    }
    let (k, d) = (codebook.k, codebook.d);
    let weights = usage_weights(k, usage);

    let mut mean = vec![0.0; d];
    for i in 0..k {
        for (m, x) in mean.iter_mut().zip(codebook.row(i)) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= k as f64;
    }
    let centered: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            codebook
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(x, m)| x - m)
                .collect()
        })
        .collect();

    let mut cov = vec![vec![0.0; d]; d];
    for row in &centered {
        for (i, xi) in row.iter().enumerate() {
            for (j, xj) in row.iter().enumerate() {
                cov[i][j] += xi * xj;
            }
        }
    }
    for row in cov.iter_mut() {
        for x in row.iter_mut() {
            *x /= k as f64;
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    if trace <= 1e-12 {
        let points = (0..k)
            .map(|index| ProjectedCode {
                index,
                x: 0.0,
                y: 0.0,
                weight: weights[index],
            })
            .collect();
        return Ok(TopologyProjection {
            points,
            variance_captured: 0.0,
            degenerate: true,
        });
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(cov);
    let v1 = &eigenvectors[0];
    let v2 = eigenvectors.get(1);
    let points = centered
        .iter()
        .enumerate()
        .map(|(index, row)| ProjectedCode {
            index,
            x: row.iter().zip(v1).map(|(a, b)| a * b).sum(),
            y: v2
                .map(|v| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .unwrap_or(0.0),
            weight: weights[index],
        })
        .collect();
    let captured = (eigenvalues[0] + eigenvalues.get(1).copied().unwrap_or(0.0)) / trace;
    Ok(TopologyProjection {
        points,
        variance_captured: captured.clamp(0.0, 1.0),
        degenerate: false,
    })
}
