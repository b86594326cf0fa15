//! Message-as-action comparison trainer.
//!
//! Same game and REINFORCE loop as the main trainer, but the channel has no
//! codebook: Agent A emits L tokens from a K-symbol alphabet straight out of
//! a policy head over its label embedding, and Agent B reads the message as
//! concatenated one-hot blocks. There are no reflection heads, so each
//! agent's loss is policy plus the entropy bonus and nothing else.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::runlog::{RunLog, RunLogWriter, RunMode};
use super::{check_record_finite, ContextSource, EpisodeRecord, LossBreakdown, TrainConfig};
use crate::agents::{head, label_table, sample_heads};
use crate::diffcore::{Mlp, Optimizer, ParamId, ParamStore, Tape, UpdateRule};
use crate::env::{action_of, payoff, sample_signal, Dataset};
use crate::{AimError, Result};

struct BaselinePair {
    store_a: ParamStore,
    policy_a: Mlp,
    label_embed_a: ParamId,
    store_b: ParamStore,
    policy_b: Mlp,
    label_embed_b: ParamId,
}

fn one_hot_message(tokens: &[usize], k: usize) -> Vec<f64> {
    let mut v = vec![0.0; tokens.len() * k];
    for (slot, &t) in tokens.iter().enumerate() {
        v[slot * k + t] = 1.0;
    }
    v
}

impl BaselinePair {
    fn new(cfg: &TrainConfig, rng: &mut impl Rng) -> Self {
        let ac = cfg.agent_config();
        let msg_dim = cfg.l * cfg.k;
        let mut store_a = ParamStore::new();
        let policy_a = head(&mut store_a, rng, ac.label_embed_dim, ac.hidden, msg_dim);
        let label_embed_a = label_table(&mut store_a, rng, &ac);
        let mut store_b = ParamStore::new();
        let policy_b = head(
            &mut store_b,
            rng,
            msg_dim + ac.label_embed_dim,
            ac.hidden,
            msg_dim,
        );
        let label_embed_b = label_table(&mut store_b, rng, &ac);
        Self {
            store_a,
            policy_a,
            label_embed_a,
            store_b,
            policy_b,
            label_embed_b,
        }
    }

    fn logits_b_on_tape(&self, tape: &mut Tape, message: &[f64], label: usize) -> Result<crate::diffcore::VarId> {
        let msg = tape.input(message);
        let lab = tape.param_row(&self.store_b, self.label_embed_b, label);
        let x = tape.concat(&[msg, lab]);
        self.policy_b.forward(tape, &self.store_b, x)
    }

    /// Zeroes the first-layer columns that read the message, severing the
    /// channel while leaving the label pathway intact.
    #[cfg(test)]
    fn zero_message_weights(&mut self, msg_dim: usize) {
        let w = self.policy_b.params()[0];
        let p = self.store_b.get_mut(w);
        let (rows, cols) = p.dims2();
        for r in 0..rows {
            for c in 0..msg_dim {
                p.values[r * cols + c] = 0.0;
            }
        }
    }

    #[cfg(test)]
    fn policy_logits_b(&self, message: &[f64], label: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let logits = self.logits_b_on_tape(&mut tape, message, label).unwrap();
        tape.value(logits).to_vec()
    }

    #[cfg(test)]
    fn policy_logits_a(&self, label: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let lab = tape.param_row(&self.store_a, self.label_embed_a, label);
        let logits = self.policy_a.forward(&mut tape, &self.store_a, lab).unwrap();
        tape.value(logits).to_vec()
    }
}

struct BaselineTapes {
    tape_a: Tape,
    loss_a: crate::diffcore::VarId,
    tape_b: Tape,
    loss_b: crate::diffcore::VarId,
}

fn baseline_episode(
    cfg: &TrainConfig,
    pair: &BaselinePair,
    dataset: &Dataset,
    episode: usize,
    rng: &mut impl Rng,
) -> Result<(EpisodeRecord, BaselineTapes)> {
    let signal = sample_signal(dataset, rng)?;
    let context_bit = match cfg.context_source {
        ContextSource::LabelParity => signal.context_bit,
        ContextSource::IterationIndex => (episode % 2) as u8,
    };
    let label = signal.label as usize;

    let mut tape_a = Tape::new();
    let lab = tape_a.param_row(&pair.store_a, pair.label_embed_a, label);
    let logits_a = pair.policy_a.forward(&mut tape_a, &pair.store_a, lab)?;
    let act_a = sample_heads(&mut tape_a, logits_a, rng, cfg.l, cfg.k)?;

    let mut tape_b = Tape::new();
    let message = one_hot_message(&act_a.aim.tokens, cfg.k);
    let logits_b = pair.logits_b_on_tape(&mut tape_b, &message, label)?;
    let act_b = sample_heads(&mut tape_b, logits_b, rng, cfg.l, cfg.k)?;

    let action_a = action_of(&act_a.aim, cfg.k);
    let action_b = action_of(&act_b.aim, cfg.k);
    let rewards = payoff(action_a, action_b, context_bit);

    let mut loss_a = LossBreakdown::zeroed();
    let p = tape_a.scale(act_a.log_prob, -rewards.joint);
    loss_a.policy = tape_a.scalar(p);
    let ent = tape_a.scale(act_a.entropy, -cfg.lambda_entropy);
    let total_a = tape_a.sum(&[p, ent]);
    loss_a.total = tape_a.scalar(total_a);

    let mut loss_b = LossBreakdown::zeroed();
    let p = tape_b.scale(act_b.log_prob, -rewards.joint);
    loss_b.policy = tape_b.scalar(p);
    let ent = tape_b.scale(act_b.entropy, -cfg.lambda_entropy);
    let total_b = tape_b.sum(&[p, ent]);
    loss_b.total = tape_b.scalar(total_b);

    let record = EpisodeRecord {
        episode,
        label: signal.label,
        context_bit,
        aim_a: act_a.aim,
        aim_b: act_b.aim,
        action_a,
        action_b,
        r_a: rewards.r_a,
        r_b: rewards.r_b,
        joint: rewards.joint,
        log_prob_a: tape_a.scalar(act_a.log_prob),
        log_prob_b: tape_b.scalar(act_b.log_prob),
        entropy_a: tape_a.scalar(act_a.entropy),
        entropy_b: tape_b.scalar(act_b.entropy),
        loss_a,
        loss_b,
        central_value_loss: 0.0,
    };
    Ok((
        record,
        BaselineTapes {
            tape_a,
            loss_a: total_a,
            tape_b,
            loss_b: total_b,
        },
    ))
}

/// Trains the message-as-action pair for `cfg.episodes` episodes. Only the
/// game, sampling, entropy, and optimizer settings of `cfg` apply; the
/// reflection knobs (`strategy`, `lambda_reflect`, `b_value_head`,
/// `opponent_aim_loss`) have nothing to act on here and are ignored, as is
/// `d`. The run log uses the same record schema as the main trainer.
pub fn train_baseline(cfg: &TrainConfig, dataset: &Dataset, out: Option<&Path>) -> Result<RunLog> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(AimError::Config("training dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pair = BaselinePair::new(cfg, &mut rng);
    let params_a: Vec<ParamId> = {
        let mut ids = pair.policy_a.params();
        ids.push(pair.label_embed_a);
        ids
    };
    let params_b: Vec<ParamId> = {
        let mut ids = pair.policy_b.params();
        ids.push(pair.label_embed_b);
        ids
    };
    let mut opt_a = Optimizer::new(UpdateRule::adam(cfg.lr));
    let mut opt_b = Optimizer::new(UpdateRule::adam(cfg.lr));
    let mut writer = match out {
        Some(path) => Some(RunLogWriter::create(path, RunMode::Baseline, cfg)?),
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let batch_start = episode - episode % cfg.batch_size;
        let batch_len = cfg.batch_size.min(cfg.episodes - batch_start);
        let (record, mut tapes) = baseline_episode(cfg, &pair, dataset, episode, &mut rng)?;
        check_record_finite(&record)?;
        let inv = 1.0 / batch_len as f64;
        let la = tapes.tape_a.scale(tapes.loss_a, inv);
        tapes.tape_a.backward(la, &mut pair.store_a)?;
        let lb = tapes.tape_b.scale(tapes.loss_b, inv);
        tapes.tape_b.backward(lb, &mut pair.store_b)?;
        if let Some(w) = writer.as_mut() {
            w.append(&record)?;
        }
        records.push(record);
        if episode + 1 == batch_start + batch_len {
            opt_a.step(&mut pair.store_a, &params_a);
            opt_b.step(&mut pair.store_b, &params_b);
            pair.store_a.check_finite()?;
            pair.store_b.check_finite()?;
            if let Some(w) = writer.as_mut() {
                w.flush()?;
            }
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    Ok(RunLog {
        mode: RunMode::Baseline,
        config: cfg.clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::categorical_sample;
    use crate::env::Action;
    use std::collections::HashSet;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            episodes: 64,
            k: 8,
            d: 4,
            l: 2,
            batch_size: 8,
            context_source: ContextSource::IterationIndex,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_reruns_are_identical() {
        let cfg = tiny_config();
        let dataset = Dataset::synthetic(3, 4);
        let a = train_baseline(&cfg, &dataset, None).unwrap();
        let b = train_baseline(&cfg, &dataset, None).unwrap();
        assert_eq!(a, b);
        let different = TrainConfig {
            seed: 9,
            ..cfg
        };
        let c = train_baseline(&different, &dataset, None).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn run_file_schema_matches_the_aim_trainer() {
        let cfg = tiny_config();
        let dataset = Dataset::synthetic(3, 4);
        let dir = tempfile::tempdir().unwrap();
        let base_path = dir.path().join("baseline.jsonl");
        train_baseline(&cfg, &dataset, Some(&base_path)).unwrap();

        let vq_cfg = crate::vqvae::VqConfig {
            k: cfg.k,
            d: cfg.d,
            l: cfg.l,
            input_dim: dataset.pixel_dim(),
            hidden: 16,
            ..crate::vqvae::VqConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vqvae = crate::vqvae::VqVae::new(vq_cfg, &mut rng).unwrap();
        let aim_path = dir.path().join("aim.jsonl");
        super::super::train(&cfg, &vqvae, &dataset, Some(&aim_path)).unwrap();

        let record_keys = |path: &Path| -> Vec<String> {
            let text = std::fs::read_to_string(path).unwrap();
            let line = text.lines().nth(1).unwrap();
            let value: serde_json::Value = serde_json::from_str(line).unwrap();
            let mut keys: Vec<String> = value.as_object().unwrap().keys().cloned().collect();
            keys.sort();
            keys
        };
        assert_eq!(record_keys(&base_path), record_keys(&aim_path));

        let loaded = RunLog::load(&base_path).unwrap();
        assert_eq!(loaded.mode, RunMode::Baseline);
        assert_eq!(loaded.records.len(), cfg.episodes);
    }

    #[test]
    fn totals_recompose_from_policy_and_entropy_alone() {
        let cfg = tiny_config();
        let dataset = Dataset::synthetic(3, 4);
        let log = train_baseline(&cfg, &dataset, None).unwrap();
        for r in &log.records {
            assert_eq!(r.loss_a.total, r.loss_a.policy + -cfg.lambda_entropy * r.entropy_a);
            assert_eq!(r.loss_b.total, r.loss_b.policy + -cfg.lambda_entropy * r.entropy_b);
            assert_eq!(r.loss_a.value, 0.0);
            assert_eq!(r.loss_a.intent, 0.0);
            assert_eq!(r.loss_b.predictive, 0.0);
            assert_eq!(r.loss_b.opp_aim, 0.0);
            assert_eq!(r.central_value_loss, 0.0);
            assert_eq!(r.action_a, action_of(&r.aim_a, cfg.k));
            assert_eq!(r.action_b, action_of(&r.aim_b, cfg.k));
        }
    }

    #[test]
    fn fresh_b_reacts_to_the_message_but_a_severed_channel_does_not() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pair = BaselinePair::new(&cfg, &mut rng);
        let msg_dim = cfg.l * cfg.k;

        let logit_patterns = |pair: &BaselinePair| -> HashSet<Vec<u64>> {
            let mut set = HashSet::new();
            for first in 0..cfg.k {
                for second in [0, 3, 7] {
                    let message = one_hot_message(&[first, second], cfg.k);
                    let bits: Vec<u64> = pair
                        .policy_logits_b(&message, 5)
                        .iter()
                        .map(|v| v.to_bits())
                        .collect();
                    set.insert(bits);
                }
            }
            set
        };

        assert!(logit_patterns(&pair).len() > 1);
        pair.zero_message_weights(msg_dim);
        let severed = logit_patterns(&pair);
        assert_eq!(severed.len(), 1);
        let muted: Vec<u64> = pair
            .policy_logits_b(&vec![0.0; msg_dim], 5)
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert!(severed.contains(&muted));
    }

    #[test]
    fn severed_channel_play_equals_no_communication_play() {
        let cfg = TrainConfig {
            episodes: 300,
            ..tiny_config()
        };
        let dataset = Dataset::synthetic(3, 4);
        let mut init_rng = ChaCha8Rng::seed_from_u64(11);
        let mut pair = BaselinePair::new(&cfg, &mut init_rng);
        pair.zero_message_weights(cfg.l * cfg.k);

        let mut played = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for episode in 0..cfg.episodes {
            let (record, _) = baseline_episode(&cfg, &pair, &dataset, episode, &mut rng).unwrap();
            played.push((record.action_a, record.action_b, record.joint.to_bits()));
        }

        // Independent-bandits replay: B never sees the message, every rng
        // draw happens in the same order as above.
        let mut solo = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let muted = vec![0.0; cfg.l * cfg.k];
        for episode in 0..cfg.episodes {
            let signal = sample_signal(&dataset, &mut rng).unwrap();
            let label = signal.label as usize;
            let context_bit = (episode % 2) as u8;
            let logits_a = pair.policy_logits_a(label);
            let mut tokens_a = Vec::new();
            for slot in 0..cfg.l {
                let draw =
                    categorical_sample(&logits_a[slot * cfg.k..(slot + 1) * cfg.k], &mut rng)
                        .unwrap();
                tokens_a.push(draw.index);
            }
            let logits_b = pair.policy_logits_b(&muted, label);
            let mut tokens_b = Vec::new();
            for slot in 0..cfg.l {
                let draw =
                    categorical_sample(&logits_b[slot * cfg.k..(slot + 1) * cfg.k], &mut rng)
                        .unwrap();
                tokens_b.push(draw.index);
            }
            let aim_a = crate::vqvae::AimSequence { tokens: tokens_a };
            let aim_b = crate::vqvae::AimSequence { tokens: tokens_b };
            let action_a = action_of(&aim_a, cfg.k);
            let action_b = action_of(&aim_b, cfg.k);
            let rewards = payoff(action_a, action_b, context_bit);
            solo.push((action_a, action_b, rewards.joint.to_bits()));
        }
        assert_eq!(played, solo);
    }

    #[test]
    fn window_means_never_exceed_the_cooperative_ceiling() {
        let cfg = TrainConfig {
            episodes: 400,
            ..tiny_config()
        };
        let dataset = Dataset::synthetic(3, 4);
        let log = train_baseline(&cfg, &dataset, None).unwrap();
        for w in log.window_aggregates(50) {
            assert!(w.mean_joint <= 9.0 + 1e-9);
        }
        assert!(log.records.iter().all(|r| {
            matches!(
                (r.action_a, r.action_b),
                (Action::Cooperate | Action::Defect, Action::Cooperate | Action::Defect)
            )
        }));
    }
}
