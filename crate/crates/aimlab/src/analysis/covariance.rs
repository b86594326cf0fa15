//! Code/behavior covariance tables.
//!
//! Two granularities: per first token, because the action rule makes the
//! first token the behaviorally decisive unit, and per full sequence for
//! completeness. Correlations are point-biserial between per-episode code
//! presence and joint reward, on population moments.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::env::Action;
use crate::trainer::RunLog;
use crate::vqvae::AimSequence;

/// Statistics for one code (or full sequence).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodeStats {
    /// Times some agent spoke it; up to two per episode.
    pub occurrences: usize,
    /// Episodes in which at least one agent spoke it.
    pub episodes_present: usize,
    /// Fraction of its uses where the speaking agent cooperated.
    pub p_cooperate: f64,
    /// Point-biserial correlation of per-episode presence with the joint
    /// reward; 0 when either side has no variance.
    pub reward_correlation: f64,
    /// True when the correlation was forced to 0 by zero variance.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    /// Keyed by first token.
    pub first_token: BTreeMap<usize, CodeStats>,
    /// Keyed by the whole spoken sequence.
    pub full_sequence: BTreeMap<AimSequence, CodeStats>,
}

struct Accumulator {
    occurrences: usize,
    cooperations: usize,
    present: Vec<bool>,
}

fn correlate(present: &[bool], joints: &[f64]) -> (f64, bool) {
    let n = present.len() as f64;
    let p = present.iter().filter(|x| **x).count() as f64 / n;
    let y_mean = joints.iter().sum::<f64>() / n;
    let y_var = joints.iter().map(|y| (y - y_mean) * (y - y_mean)).sum::<f64>() / n;
    if p == 0.0 || p == 1.0 || y_var == 0.0 {
        return (0.0, true);
    }
    let mut mean_in = 0.0;
    let mut n_in = 0.0;
    let mut mean_out = 0.0;
    let mut n_out = 0.0;
    for (x, y) in present.iter().zip(joints) {
        if *x {
            n_in += 1.0;
            mean_in += (y - mean_in) / n_in;
        } else {
            n_out += 1.0;
            mean_out += (y - mean_out) / n_out;
        }
    }
    let r = (mean_in - mean_out) / y_var.sqrt() * (p * (1.0 - p)).sqrt();
    (r.clamp(-1.0, 1.0), false)
}

/// Tabulates, for every code and sequence the run ever used, how its use
/// relates to behavior and payoff. An empty log yields an empty report.
pub fn policy_code_covariance(log: &RunLog) -> CovarianceReport {
    let episodes = log.records.len();
    let joints: Vec<f64> = log.records.iter().map(|r| r.joint).collect();
    let mut by_token: BTreeMap<usize, Accumulator> = BTreeMap::new();
    let mut by_sequence: BTreeMap<AimSequence, Accumulator> = BTreeMap::new();

    for (i, record) in log.records.iter().enumerate() {
        for (aim, action) in [
            (&record.aim_a, record.action_a),
            (&record.aim_b, record.action_b),
        ] {
            let cooperated = (action == Action::Cooperate) as usize;
            if let Some(&first) = aim.tokens.first() {
                let acc = by_token.entry(first).or_insert_with(|| Accumulator {
                    occurrences: 0,
                    cooperations: 0,
                    present: vec![false; episodes],
                });
                acc.occurrences += 1;
                acc.cooperations += cooperated;
                acc.present[i] = true;
            }
            let acc = by_sequence
                .entry(aim.clone())
                .or_insert_with(|| Accumulator {
                    occurrences: 0,
                    cooperations: 0,
                    present: vec![false; episodes],
                });
            acc.occurrences += 1;
            acc.cooperations += cooperated;
            acc.present[i] = true;
        }
    }

    let finish = |acc: Accumulator| -> CodeStats {
        let (reward_correlation, degenerate) = correlate(&acc.present, &joints);
        CodeStats {
            occurrences: acc.occurrences,
            episodes_present: acc.present.iter().filter(|x| **x).count(),
            p_cooperate: acc.cooperations as f64 / acc.occurrences as f64,
            reward_correlation,
            degenerate,
        }
    };
    CovarianceReport {
        first_token: by_token.into_iter().map(|(k, a)| (k, finish(a))).collect(),
        full_sequence: by_sequence
            .into_iter()
            .map(|(k, a)| (k, finish(a)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::action_of;
    use crate::trainer::{EpisodeRecord, LossBreakdown, RunMode, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(episode: usize, first_a: usize, first_b: usize, joint: f64) -> EpisodeRecord {
        let k = 64;
        let aim_a = AimSequence { tokens: vec![first_a, 0] };
        let aim_b = AimSequence { tokens: vec![first_b, 0] };
        EpisodeRecord {
            episode,
            label: 0,
            context_bit: 0,
            action_a: action_of(&aim_a, k),
            action_b: action_of(&aim_b, k),
            aim_a,
            aim_b,
            r_a: joint / 2.0,
            r_b: joint / 2.0,
            joint,
            log_prob_a: -1.0,
            log_prob_b: -1.0,
            entropy_a: 1.0,
            entropy_b: 1.0,
            loss_a: LossBreakdown::zeroed(),
            loss_b: LossBreakdown::zeroed(),
            central_value_loss: 0.0,
        }
    }

    fn log_from(records: Vec<EpisodeRecord>) -> RunLog {
        RunLog {
            mode: RunMode::Aim,
            config: TrainConfig::default(),
            records,
        }
    }

    #[test]
    fn p_cooperate_reproduces_the_action_rule_for_every_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<_> = (0..500)
            .map(|i| {
                record(
                    i,
                    rng.random_range(0..64),
                    rng.random_range(0..64),
                    rng.random_range(0.0..10.0),
                )
            })
            .collect();
        let report = policy_code_covariance(&log_from(records));
        assert!(!report.first_token.is_empty());
        for (&token, stats) in &report.first_token {
            let expected = if token * 2 < 64 { 1.0 } else { 0.0 };
            assert_eq!(stats.p_cooperate, expected, "token {token}");
            assert!(stats.reward_correlation.abs() <= 1.0);
        }
        let uses: usize = report.first_token.values().map(|s| s.occurrences).sum();
        assert_eq!(uses, 2 * 500);
    }

    #[test]
    fn code_used_only_in_cooperative_episodes_has_p_cooperate_one() {
        let records = vec![
            record(0, 5, 5, 8.0),
            record(1, 5, 40, 4.0),
            record(2, 40, 40, 0.0),
        ];
        let report = policy_code_covariance(&log_from(records));
        let five = &report.first_token[&5];
        assert_eq!(five.p_cooperate, 1.0);
        assert_eq!(five.occurrences, 3);
        assert_eq!(five.episodes_present, 2);
        assert_eq!(report.first_token[&40].p_cooperate, 0.0);
    }

    #[test]
    fn code_present_everywhere_reports_zero_with_a_degeneracy_flag() {
        let records: Vec<_> = (0..10)
            .map(|i| record(i, 7, (i % 64) as usize, i as f64))
            .collect();
        let report = policy_code_covariance(&log_from(records));
        let seven = &report.first_token[&7];
        assert_eq!(seven.reward_correlation, 0.0);
        assert!(seven.degenerate);
    }

    #[test]
    fn constant_reward_also_degenerates_to_zero() {
        let records = vec![
            record(0, 1, 2, 9.0),
            record(1, 3, 4, 9.0),
            record(2, 1, 4, 9.0),
        ];
        let report = policy_code_covariance(&log_from(records));
        for stats in report.first_token.values() {
            assert_eq!(stats.reward_correlation, 0.0);
            assert!(stats.degenerate);
        }
    }

    #[test]
    fn point_biserial_matches_the_textbook_formula_on_a_hand_case() {
        // Presence of token 2: episodes 0 and 1. Joints 10, 8, 0, 4.
        let records = vec![
            record(0, 2, 9, 10.0),
            record(1, 2, 9, 8.0),
            record(2, 9, 9, 0.0),
            record(3, 9, 9, 4.0),
        ];
        let report = policy_code_covariance(&log_from(records));
        let stats = &report.first_token[&2];
        let mean_in = 9.0;
        let mean_out = 2.0;
        let y = [10.0, 8.0, 0.0, 4.0];
        let y_mean = 5.5;
        let y_var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / 4.0;
        let expected = (mean_in - mean_out) / y_var.sqrt() * (0.5_f64 * 0.5).sqrt();
        assert!((stats.reward_correlation - expected).abs() < 1e-12);
        assert!(stats.reward_correlation > 0.0);
        assert!(!stats.degenerate);
    }

    #[test]
    fn correlation_sign_tracks_where_the_code_appears() {
        let mut records = Vec::new();
        for i in 0..20 {
            let (first, joint) = if i % 2 == 0 { (3, 9.0) } else { (50, 1.0) };
            records.push(record(i, first, 60, joint));
        }
        let report = policy_code_covariance(&log_from(records));
        assert!(report.first_token[&3].reward_correlation > 0.9);
        assert!(report.first_token[&50].reward_correlation < -0.9);
    }

    #[test]
    fn full_sequence_table_distinguishes_second_tokens() {
        let mut records = vec![record(0, 2, 2, 8.0)];
        records.push(record(1, 2, 2, 8.0));
        records[1].aim_a.tokens = vec![2, 9];
        let report = policy_code_covariance(&log_from(records));
        assert_eq!(report.first_token.len(), 1);
        assert_eq!(report.full_sequence.len(), 2);
        let short = &report.full_sequence[&AimSequence { tokens: vec![2, 0] }];
        assert_eq!(short.occurrences, 3);
    }

    #[test]
    fn empty_log_yields_an_empty_report() {
        let report = policy_code_covariance(&log_from(Vec::new()));
        assert!(report.first_token.is_empty());
        assert!(report.full_sequence.is_empty());
    }
}
