//! REINFORCE training loop with reflection strategies.
//!
//! One episode: sample a task signal, encode it with the frozen VQ-VAE,
//! let Agent A speak, let Agent B answer, map both sequences to actions,
//! pay out, and backpropagate the composed losses. Policy gradients use the
//! raw joint reward as the return; there is no advantage baseline. Agent A's
//! centralized critic is trained on the side and never gates the policy.

mod baseline;
mod runlog;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{sequence_cross_entropy, AgentConfig, AgentPair, TapeAct};
use crate::diffcore::{Optimizer, Tape, UpdateRule, VarId};
use crate::env::{action_of, payoff, sample_signal, Action, Dataset};
use crate::vqvae::{AimSequence, VqVae};
use crate::{AimError, Result};

pub use baseline::train_baseline;
pub use runlog::{RunLog, RunLogWriter, RunMode, WindowAggregate};

/// Which reflection terms join the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    AimContextValue,
    PredictiveBias,
    Both,
}

impl Strategy {
    pub fn value_on(&self) -> bool {
        matches!(self, Strategy::AimContextValue | Strategy::Both)
    }

    pub fn predictive_on(&self) -> bool {
        matches!(self, Strategy::PredictiveBias | Strategy::Both)
    }
}

/// Where the payoff parity bit comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    LabelParity,
    IterationIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub seed: u64,
    pub lr: f64,
    pub lambda_entropy: f64,
    pub lambda_reflect: f64,
    pub strategy: Strategy,
    pub k: usize,
    pub d: usize,
    pub l: usize,
    pub batch_size: usize,
    pub context_source: ContextSource,
    /// Train Agent B's value head too when the strategy calls for value
    /// reflection; B's published total-loss equation omits the term, but the
    /// reflection method defines it for both agents.
    pub b_value_head: bool,
    /// Adds the opponent-AIM cross-entropy as an extra λ_r-weighted term.
    pub opponent_aim_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            seed: 0,
            lr: 0.06,
            lambda_entropy: 0.01,
            lambda_reflect: 0.1,
            strategy: Strategy::Both,
            k: 64,
            d: 8,
            l: 2,
            batch_size: 16,
            context_source: ContextSource::LabelParity,
            b_value_head: true,
            opponent_aim_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(AimError::Config("episodes must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AimError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(AimError::Config("lr must be positive".into()));
        }
        if self.lambda_entropy < 0.0 || self.lambda_reflect < 0.0 {
            return Err(AimError::Config("lambdas must be nonnegative".into()));
        }
        self.agent_config().validate()
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            k: self.k,
            d: self.d,
            l: self.l,
            ..AgentConfig::default()
        }
    }
}

/// One agent's per-term losses for one episode. `value`, `predictive`, and
/// `opp_aim` are zero whenever their strategy gate is off; `total` is the
/// λ-weighted composition actually backpropagated (before the side-trained
/// central value term).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub policy: f64,
    pub value: f64,
    pub intent: f64,
    pub predictive: f64,
    pub opp_aim: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn zeroed() -> Self {
        Self {
            policy: 0.0,
            value: 0.0,
            intent: 0.0,
            predictive: 0.0,
            opp_aim: 0.0,
            total: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub label: u8,
    pub context_bit: u8,
    pub aim_a: AimSequence,
    pub aim_b: AimSequence,
    pub action_a: Action,
    pub action_b: Action,
    pub r_a: f64,
    pub r_b: f64,
    pub joint: f64,
    pub log_prob_a: f64,
    pub log_prob_b: f64,
    pub entropy_a: f64,
    pub entropy_b: f64,
    pub loss_a: LossBreakdown,
    pub loss_b: LossBreakdown,
    pub central_value_loss: f64,
}

/// −log π(a) · R, with the reward treated as a constant.
pub fn policy_loss(log_prob: f64, joint_reward: f64) -> f64 {
    -log_prob * joint_reward
}

/// The auxiliary squared-error terms a strategy switches on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionTerms {
    pub value_a: f64,
    pub value_b: f64,
    pub predictive_a: f64,
    pub predictive_b: f64,
}

/// Evaluates the reflection losses for one played episode. Value heads
/// regress the joint reward; predictive heads regress the opponent's
/// individual reward. Both condition on Agent A's message.
pub fn reflection_losses(
    pair: &AgentPair,
    aim_a: &AimSequence,
    z_e: &[f64],
    label: usize,
    r_a: f64,
    r_b: f64,
    joint: f64,
    strategy: Strategy,
    b_value_head: bool,
) -> Result<ReflectionTerms> {
    let mut terms = ReflectionTerms {
        value_a: 0.0,
        value_b: 0.0,
        predictive_a: 0.0,
        predictive_b: 0.0,
    };
    if strategy.value_on() {
        let v = pair.predict_aim_value_a(aim_a, z_e, label)?;
        terms.value_a = (v - joint).powi(2);
        if b_value_head {
            let v = pair.predict_aim_value_b(aim_a, label, z_e)?;
            terms.value_b = (v - joint).powi(2);
        }
    }
    if strategy.predictive_on() {
        let p = pair.predict_opponent_reward_a(aim_a, z_e, label)?;
        terms.predictive_a = (p - r_b).powi(2);
        let p = pair.predict_opponent_reward_b(aim_a, label, z_e)?;
        terms.predictive_b = (p - r_a).powi(2);
    }
    Ok(terms)
}

/// Recomposes both totals from a record's raw terms, in the same order the
/// training tape sums them.
pub fn total_losses(record: &EpisodeRecord, cfg: &TrainConfig) -> (f64, f64) {
    let compose = |loss: &LossBreakdown, entropy: f64, value_gated: bool| {
        let mut total = loss.policy;
        if value_gated {
            total += loss.value;
        }
        total += -cfg.lambda_entropy * entropy;
        total += cfg.lambda_reflect * loss.intent;
        if cfg.strategy.predictive_on() {
            total += cfg.lambda_reflect * loss.predictive;
        }
        if cfg.opponent_aim_loss {
            total += cfg.lambda_reflect * loss.opp_aim;
        }
        total
    };
    (
        compose(&record.loss_a, record.entropy_a, cfg.strategy.value_on()),
        compose(
            &record.loss_b,
            record.entropy_b,
            cfg.strategy.value_on() && cfg.b_value_head,
        ),
    )
}

struct EpisodeTapes {
    tape_a: Tape,
    loss_a: VarId,
    tape_b: Tape,
    loss_b: VarId,
}

fn intent_class(action: Action) -> usize {
    match action {
        Action::Cooperate => 0,
        Action::Defect => 1,
    }
}

/// Plays one episode and leaves both agents' loss graphs live so the caller
/// can scale and backpropagate them.
fn episode_core(
    cfg: &TrainConfig,
    pair: &AgentPair,
    vqvae: &VqVae,
    dataset: &Dataset,
    episode: usize,
    rng: &mut impl Rng,
) -> Result<(EpisodeRecord, EpisodeTapes)> {
    let signal = sample_signal(dataset, rng)?;
    let context_bit = match cfg.context_source {
        ContextSource::LabelParity => signal.context_bit,
        ContextSource::IterationIndex => (episode % 2) as u8,
    };
    let label = signal.label as usize;
    let z_e = vqvae.encode(&signal.image)?;

    let mut tape_a = Tape::new();
    let act_a: TapeAct = pair
        .a
        .act_on_tape(&mut tape_a, rng, &z_e, label, cfg.l, cfg.k)?;
    let embed_a = pair.embed(&act_a.aim)?;

    let mut tape_b = Tape::new();
    let act_b: TapeAct =
        pair.b
            .act_on_tape(&mut tape_b, rng, &embed_a, label, &z_e, cfg.l, cfg.k)?;
    let embed_b = pair.embed(&act_b.aim)?;

    let action_a = action_of(&act_a.aim, cfg.k);
    let action_b = action_of(&act_b.aim, cfg.k);
    let rewards = payoff(action_a, action_b, context_bit);
    let class_a = intent_class(action_a);

    // Agent A's total, composed in the published order: policy, value,
    // entropy, intent, predictive, plus the optional opponent-AIM term.
    let mut loss_a = LossBreakdown::zeroed();
    let mut terms_a = Vec::new();
    let p = tape_a.scale(act_a.log_prob, -rewards.joint);
    loss_a.policy = tape_a.scalar(p);
    terms_a.push(p);
    if cfg.strategy.value_on() {
        let v = pair.a.aim_value_on_tape(&mut tape_a, &embed_a, &z_e, label)?;
        let vl = tape_a.mse(v, &[rewards.joint])?;
        loss_a.value = tape_a.scalar(vl);
        terms_a.push(vl);
    }
    let ent = tape_a.scale(act_a.entropy, -cfg.lambda_entropy);
    terms_a.push(ent);
    let intent = pair.a.intent_on_tape(&mut tape_a, &embed_a, label)?;
    let intent_ce = tape_a.cross_entropy(intent, class_a)?;
    loss_a.intent = tape_a.scalar(intent_ce);
    terms_a.push(tape_a.scale(intent_ce, cfg.lambda_reflect));
    if cfg.strategy.predictive_on() {
        let r = pair.a.opp_reward_on_tape(&mut tape_a, &embed_a, &z_e, label)?;
        let rl = tape_a.mse(r, &[rewards.r_b])?;
        loss_a.predictive = tape_a.scalar(rl);
        terms_a.push(tape_a.scale(rl, cfg.lambda_reflect));
    }
    if cfg.opponent_aim_loss {
        let logits = pair.a.opp_aim_on_tape(&mut tape_a, &embed_a, label)?;
        let ce = sequence_cross_entropy(&mut tape_a, logits, &act_b.aim.tokens, cfg.k)?;
        loss_a.opp_aim = tape_a.scalar(ce);
        terms_a.push(tape_a.scale(ce, cfg.lambda_reflect));
    }
    let total_a = tape_a.sum(&terms_a);
    loss_a.total = tape_a.scalar(total_a);

    // The centralized critic learns alongside but stays out of the total.
    let cv = pair
        .a
        .central_value_on_tape(&mut tape_a, &z_e, label, &embed_b)?;
    let cv_loss = tape_a.mse(cv, &[rewards.joint])?;
    let central_value_loss = tape_a.scalar(cv_loss);
    let backward_a = tape_a.sum(&[total_a, cv_loss]);

    // Agent B mirrors A without a central critic; its value head is gated
    // by both the strategy and the b_value_head flag.
    let mut loss_b = LossBreakdown::zeroed();
    let mut terms_b = Vec::new();
    let p = tape_b.scale(act_b.log_prob, -rewards.joint);
    loss_b.policy = tape_b.scalar(p);
    terms_b.push(p);
    if cfg.strategy.value_on() && cfg.b_value_head {
        let v = pair.b.aim_value_on_tape(&mut tape_b, &embed_a, label, &z_e)?;
        let vl = tape_b.mse(v, &[rewards.joint])?;
        loss_b.value = tape_b.scalar(vl);
        terms_b.push(vl);
    }
    let ent = tape_b.scale(act_b.entropy, -cfg.lambda_entropy);
    terms_b.push(ent);
    let intent = pair.b.intent_on_tape(&mut tape_b, &embed_a, label, &z_e)?;
    let intent_ce = tape_b.cross_entropy(intent, class_a)?;
    loss_b.intent = tape_b.scalar(intent_ce);
    terms_b.push(tape_b.scale(intent_ce, cfg.lambda_reflect));
    if cfg.strategy.predictive_on() {
        let r = pair.b.opp_reward_on_tape(&mut tape_b, &embed_a, label, &z_e)?;
        let rl = tape_b.mse(r, &[rewards.r_a])?;
        loss_b.predictive = tape_b.scalar(rl);
        terms_b.push(tape_b.scale(rl, cfg.lambda_reflect));
    }
    if cfg.opponent_aim_loss {
        let logits = pair.b.opp_aim_on_tape(&mut tape_b, &embed_a, label, &z_e)?;
        let ce = sequence_cross_entropy(&mut tape_b, logits, &act_a.aim.tokens, cfg.k)?;
        loss_b.opp_aim = tape_b.scalar(ce);
        terms_b.push(tape_b.scale(ce, cfg.lambda_reflect));
    }
    let total_b = tape_b.sum(&terms_b);
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
        central_value_loss,
    };
    Ok((
        record,
        EpisodeTapes {
            tape_a,
            loss_a: backward_a,
            tape_b,
            loss_b: total_b,
        },
    ))
}

/// Plays one episode without touching any parameters.
pub fn run_episode(
    cfg: &TrainConfig,
    pair: &AgentPair,
    vqvae: &VqVae,
    dataset: &Dataset,
    episode: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeRecord> {
    let (record, _) = episode_core(cfg, pair, vqvae, dataset, episode, rng)?;
    Ok(record)
}

fn check_record_finite(record: &EpisodeRecord) -> Result<()> {
    let values = [
        record.loss_a.total,
        record.loss_b.total,
        record.central_value_loss,
        record.log_prob_a,
        record.log_prob_b,
    ];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AimError::Training {
            unit: "episode".into(),
            index: record.episode,
            message: "non-finite loss".into(),
        });
    }
    Ok(())
}

/// A finished run: the log plus the trained pair, ready to checkpoint.
pub struct TrainOutcome {
    pub pair: AgentPair,
    pub log: RunLog,
}

/// Trains both agents for `cfg.episodes` episodes against the frozen
/// VQ-VAE, one optimizer step per batch. The run log is persisted
/// incrementally when `out` is given and is identical across reruns with
/// the same config.
pub fn train(
    cfg: &TrainConfig,
    vqvae: &VqVae,
    dataset: &Dataset,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vq = vqvae.config();
    if vq.k != cfg.k || vq.d != cfg.d || vq.l != cfg.l {
        return Err(AimError::Config(format!(
            "vq-vae is k={} d={} l={} but train config wants k={} d={} l={}",
            vq.k, vq.d, vq.l, cfg.k, cfg.d, cfg.l
        )));
    }
    if dataset.is_empty() {
        return Err(AimError::Config("training dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pair = AgentPair::new(cfg.agent_config(), vqvae.codebook(), &mut rng)?;
    train_pair(cfg, pair, vqvae, dataset, out, rng)
}

/// As [`train`], but starting from an existing agent pair.
pub fn train_pair(
    cfg: &TrainConfig,
    mut pair: AgentPair,
    vqvae: &VqVae,
    dataset: &Dataset,
    out: Option<&Path>,
    mut rng: ChaCha8Rng,
) -> Result<TrainOutcome> {
    let params_a = pair.a.all_params();
    let params_b = pair.b.all_params();
    let mut opt_a = Optimizer::new(UpdateRule::adam(cfg.lr));
    let mut opt_b = Optimizer::new(UpdateRule::adam(cfg.lr));
    let mut writer = match out {
        Some(path) => Some(RunLogWriter::create(path, RunMode::Aim, cfg)?),
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let batch_start = episode - episode % cfg.batch_size;
        let batch_len = cfg.batch_size.min(cfg.episodes - batch_start);
        let (record, mut tapes) = episode_core(cfg, &pair, vqvae, dataset, episode, &mut rng)?;
        check_record_finite(&record)?;
        let inv = 1.0 / batch_len as f64;
        let la = tapes.tape_a.scale(tapes.loss_a, inv);
        tapes.tape_a.backward(la, pair.a.store_mut())?;
        let lb = tapes.tape_b.scale(tapes.loss_b, inv);
        tapes.tape_b.backward(lb, pair.b.store_mut())?;
        if let Some(w) = writer.as_mut() {
            w.append(&record)?;
        }
        records.push(record);
        if episode + 1 == batch_start + batch_len {
            opt_a.step(pair.a.store_mut(), &params_a);
            opt_b.step(pair.b.store_mut(), &params_b);
            pair.a.store().check_finite()?;
            pair.b.store().check_finite()?;
            if let Some(w) = writer.as_mut() {
                w.flush()?;
            }
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    Ok(TrainOutcome {
        pair,
        log: RunLog {
            mode: RunMode::Aim,
            config: cfg.clone(),
            records,
        },
    })
}
