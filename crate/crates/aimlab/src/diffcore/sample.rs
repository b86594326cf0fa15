//! Softmax utilities and categorical sampling.

use rand::Rng;

use crate::{AimError, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Numerically stable log softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits
        .iter()
        .map(|z| (z - max).exp())
        .sum::<f64>()
        .ln();
    logits.iter().map(|z| z - max - log_sum).collect()
}

/// Entropy −Σ p log p of softmax(logits).
pub fn softmax_entropy(logits: &[f64]) -> f64 {
    log_softmax(logits).iter().map(|l| -l.exp() * l).sum()
}

/// Result of sampling from a categorical distribution over logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoricalDraw {
    pub index: usize,
    pub log_prob: f64,
    /// Entropy of the whole distribution, not of the drawn index.
    pub entropy: f64,
}

/// Samples an index proportionally to softmax(logits) by inverse CDF over
/// the stable softmax, so extreme logits cannot overflow.
pub fn categorical_sample<R: Rng>(logits: &[f64], rng: &mut R) -> Result<CategoricalDraw> {
    if logits.len() < 2 {
        return Err(AimError::Usage(format!(
            "categorical sample needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(AimError::Numerical(
            "non-finite logits in categorical sample".into(),
        ));
    }
    let probs = softmax(logits);
    let u: f64 = rng.random_range(0.0..1.0);
    let mut cum = 0.0;
    let mut index = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            index = i;
            break;
        }
    }
    Ok(CategoricalDraw {
        index,
        log_prob: log_softmax(logits)[index],
        entropy: softmax_entropy(logits),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_sums_to_one_and_is_monotone() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] < p[1] && p[1] < p[2]);
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        let lp = log_softmax(&[1000.0, 0.0]);
        assert!(lp.iter().all(|v| v.is_finite()));
        assert!((lp[1] - -1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let p = softmax(&z);
        let lp = log_softmax(&z);
        for (pi, lpi) in p.iter().zip(&lp) {
            assert!((pi.ln() - lpi).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_give_uniform_log_prob() {
        let lp = log_softmax(&[0.5, 0.5, 0.5, 0.5]);
        for l in lp {
            assert!((l - -(4.0_f64.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_frequency_matches_probabilities() {
        // logits (ln 3, 0): p = (3/4, 1/4)
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = [3.0_f64.ln(), 0.0];
        let n = 200_000;
        let mut count0 = 0usize;
        for _ in 0..n {
            let d = categorical_sample(&logits, &mut rng).unwrap();
            if d.index == 0 {
                count0 += 1;
            }
        }
        let freq = count0 as f64 / n as f64;
        assert!(
            (freq - 0.75).abs() < 0.01,
            "frequency {freq} not within 0.01 of 0.75"
        );
    }

    #[test]
    fn sample_log_prob_matches_log_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = [0.1, -0.4, 1.7];
        let lp = log_softmax(&logits);
        for _ in 0..100 {
            let d = categorical_sample(&logits, &mut rng).unwrap();
            assert_eq!(d.log_prob, lp[d.index]);
        }
    }

    #[test]
    fn sample_is_deterministic_under_fixed_seed() {
        let logits = [0.2, 0.9, -0.3, 0.0];
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..32)
                .map(|_| categorical_sample(&logits, &mut rng).unwrap().index)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn non_finite_logits_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            categorical_sample(&[f64::NAN, 0.0], &mut rng),
            Err(AimError::Numerical(_))
        ));
        assert!(matches!(
            categorical_sample(&[0.0], &mut rng),
            Err(AimError::Usage(_))
        ));
    }

    #[test]
    fn entropy_of_extreme_logits_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = categorical_sample(&[1000.0, -1000.0], &mut rng).unwrap();
        assert_eq!(d.index, 0);
        assert!(d.log_prob.abs() < 1e-9);
        assert!(d.entropy.abs() < 1e-9);
    }

    #[test]
    fn constant_logits_reach_maximum_entropy() {
        let h = softmax_entropy(&[0.7; 16]);
        assert!((h - 16.0_f64.ln()).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn distribution_invariants(
            logits in proptest::collection::vec(-50.0_f64..50.0, 2..64),
            seed in 0u64..1000,
        ) {
            let p = softmax(&logits);
            let sum: f64 = p.iter().sum();
            proptest::prop_assert!((sum - 1.0).abs() < 1e-9);

            let k = logits.len() as f64;
            let h = softmax_entropy(&logits);
            proptest::prop_assert!(h >= -1e-12 && h <= k.ln() + 1e-12);

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = categorical_sample(&logits, &mut rng).unwrap();
            proptest::prop_assert!(d.index < logits.len());
            proptest::prop_assert!(d.log_prob <= 0.0);
        }
    }
}
