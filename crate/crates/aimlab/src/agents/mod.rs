//! The two communicating agents.
//!
//! Agent A encodes its perception into an AIM sequence; Agent B reads that
//! sequence and answers with its own. Beyond the policy heads, each agent
//! carries reflection heads: a value head over its sent or received message,
//! a predictor of the opponent's individual reward, a predictor of the
//! opponent's next AIM sequence, and an intent head that decodes a message
//! into cooperate/defect logits. All heads are small tanh MLPs over
//! concatenated inputs; message embeddings are frozen codebook rows, so no
//! policy gradient can reach the codebook.

mod checkpoint;

use rand::Rng;

use crate::diffcore::{
    categorical_sample, grad_check, log_softmax, Activation, Mlp, ParamId, ParamStore, Tape,
    VarId,
};
use crate::vqvae::{AimSequence, Codebook};
use crate::{AimError, Result};

/// Shapes shared by both agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    /// Codebook size (token alphabet).
    pub k: usize,
    /// Codebook vector width.
    pub d: usize,
    /// Tokens per AIM sequence.
    pub l: usize,
    /// Number of label classes.
    pub label_classes: usize,
    /// Width of the learned label embedding.
    pub label_embed_dim: usize,
    /// Hidden width of every head (two hidden layers).
    pub hidden: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            k: 64,
            d: 8,
            l: 2,
            label_classes: 10,
            label_embed_dim: 8,
            hidden: 64,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("d", self.d),
            ("l", self.l),
            ("label_classes", self.label_classes),
            ("label_embed_dim", self.label_embed_dim),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(AimError::Config(format!("agent config: {name} must be positive")));
            }
        }
        if self.k < 2 {
            return Err(AimError::Config("agent config: k must be at least 2".into()));
        }
        Ok(())
    }

    /// Width of an embedded AIM sequence and of the encoder output z_e.
    pub fn embed_dim(&self) -> usize {
        self.l * self.d
    }

    /// Agent A's policy input: z_e then label embedding.
    pub fn policy_input_a(&self) -> usize {
        self.embed_dim() + self.label_embed_dim
    }

    /// Agent B's policy input: received message, label embedding, z_e.
    pub fn policy_input_b(&self) -> usize {
        self.embed_dim() + self.label_embed_dim + self.embed_dim()
    }

    /// Central value input: A's policy input plus the embedded reply.
    pub fn critic_input(&self) -> usize {
        self.policy_input_a() + self.embed_dim()
    }

    fn policy_output(&self) -> usize {
        self.l * self.k
    }
}

/// One sampled communication act: the sequence plus the score-function terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutcome {
    pub aim: AimSequence,
    /// Sum over tokens of log π(token); ≤ 0.
    pub log_prob: f64,
    /// Sum over tokens of the per-head distribution entropy; in [0, L·ln K].
    pub entropy: f64,
}

/// A sampled act whose score terms are still live tape variables.
pub struct TapeAct {
    pub aim: AimSequence,
    pub log_prob: VarId,
    pub entropy: VarId,
}

/// Concatenation of codebook rows for each token, in sequence order.
///
/// The rows are copied out of the codebook, so downstream networks consume
/// them as constants and reinforcement losses cannot move the codebook.
pub fn embed_aim(aim: &AimSequence, codebook: &Codebook) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(aim.tokens.len() * codebook.d);
    for &t in &aim.tokens {
        if t >= codebook.k {
            return Err(AimError::Usage(format!(
                "token {t} out of range for codebook of size {}",
                codebook.k
            )));
        }
        out.extend_from_slice(codebook.row(t));
    }
    Ok(out)
}

/// The active communicator: speaks first from its own perception and holds
/// the centralized value head.
#[derive(Debug, Clone)]
pub struct AgentA {
    store: ParamStore,
    policy: Mlp,
    central_value: Mlp,
    aim_value: Mlp,
    opp_reward: Mlp,
    opp_aim: Mlp,
    intent: Mlp,
    label_embed: ParamId,
}

/// The responsive communicator: every head reads the received message along
/// with the label embedding and z_e.
#[derive(Debug, Clone)]
pub struct AgentB {
    store: ParamStore,
    policy: Mlp,
    aim_value: Mlp,
    opp_reward: Mlp,
    opp_aim: Mlp,
    intent: Mlp,
    label_embed: ParamId,
}

pub(crate) fn head(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    input: usize,
    hidden: usize,
    output: usize,
) -> Mlp {
    Mlp::new(
        store,
        rng,
        &[input, hidden, hidden, output],
        Activation::Tanh,
        Activation::Identity,
    )
}

pub(crate) fn label_table(store: &mut ParamStore, rng: &mut impl Rng, cfg: &AgentConfig) -> ParamId {
    let n = cfg.label_classes * cfg.label_embed_dim;
    let values = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    store.add(vec![cfg.label_classes, cfg.label_embed_dim], values)
}

impl AgentA {
    fn new(cfg: &AgentConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let policy = head(&mut store, rng, cfg.policy_input_a(), cfg.hidden, cfg.policy_output());
        let central_value = head(&mut store, rng, cfg.critic_input(), cfg.hidden, 1);
        let aim_value = head(&mut store, rng, cfg.critic_input(), cfg.hidden, 1);
        let opp_reward = head(&mut store, rng, cfg.critic_input(), cfg.hidden, 1);
        let opp_aim = head(&mut store, rng, cfg.policy_input_a(), cfg.hidden, cfg.policy_output());
        let intent = head(&mut store, rng, cfg.policy_input_a(), cfg.hidden, 2);
        let label_embed = label_table(&mut store, rng, cfg);
        Self {
            store,
            policy,
            central_value,
            aim_value,
            opp_reward,
            opp_aim,
            intent,
            label_embed,
        }
    }

    pub(crate) fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Every trainable parameter, policy first.
    pub(crate) fn all_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for net in [
            &self.policy,
            &self.central_value,
            &self.aim_value,
            &self.opp_reward,
            &self.opp_aim,
            &self.intent,
        ] {
            ids.extend(net.params());
        }
        ids.push(self.label_embed);
        ids
    }

    fn label_var(&self, tape: &mut Tape, label: usize) -> VarId {
        tape.param_row(&self.store, self.label_embed, label)
    }

    /// Policy forward on a live tape: samples L tokens, one per K-wide head.
    pub(crate) fn act_on_tape(
        &self,
        tape: &mut Tape,
        rng: &mut impl Rng,
        z_e: &[f64],
        label: usize,
        l: usize,
        k: usize,
    ) -> Result<TapeAct> {
        let z = tape.input(z_e);
        let lab = self.label_var(tape, label);
        let x = tape.concat(&[z, lab]);
        let logits = self.policy.forward(tape, &self.store, x)?;
        sample_heads(tape, logits, rng, l, k)
    }

    pub(crate) fn central_value_on_tape(
        &self,
        tape: &mut Tape,
        z_e: &[f64],
        label: usize,
        embed_b: &[f64],
    ) -> Result<VarId> {
        let z = tape.input(z_e);
        let lab = self.label_var(tape, label);
        let e = tape.input(embed_b);
        let x = tape.concat(&[z, lab, e]);
        self.central_value.forward(tape, &self.store, x)
    }

    pub(crate) fn aim_value_on_tape(
        &self,
        tape: &mut Tape,
        embed_a: &[f64],
        z_e: &[f64],
        label: usize,
    ) -> Result<VarId> {
        let x = self.reflect_input(tape, embed_a, z_e, label);
        self.aim_value.forward(tape, &self.store, x)
    }

    pub(crate) fn opp_reward_on_tape(
        &self,
        tape: &mut Tape,
        embed_a: &[f64],
        z_e: &[f64],
        label: usize,
    ) -> Result<VarId> {
        let x = self.reflect_input(tape, embed_a, z_e, label);
        self.opp_reward.forward(tape, &self.store, x)
    }

    pub(crate) fn opp_aim_on_tape(
        &self,
        tape: &mut Tape,
        embed_a: &[f64],
        label: usize,
    ) -> Result<VarId> {
        let e = tape.input(embed_a);
        let lab = self.label_var(tape, label);
        let x = tape.concat(&[e, lab]);
        self.opp_aim.forward(tape, &self.store, x)
    }

    pub(crate) fn intent_on_tape(
        &self,
        tape: &mut Tape,
        embed_a: &[f64],
        label: usize,
    ) -> Result<VarId> {
        let e = tape.input(embed_a);
        let lab = self.label_var(tape, label);
        let x = tape.concat(&[e, lab]);
        self.intent.forward(tape, &self.store, x)
    }

    /// Message embedding followed by A's own task state (z_e, label).
    fn reflect_input(&self, tape: &mut Tape, embed: &[f64], z_e: &[f64], label: usize) -> VarId {
        let e = tape.input(embed);
        let z = tape.input(z_e);
        let lab = self.label_var(tape, label);
        tape.concat(&[e, z, lab])
    }

    #[cfg(test)]
    fn policy_logits(&self, z_e: &[f64], label: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let z = tape.input(z_e);
        let lab = self.label_var(&mut tape, label);
        let x = tape.concat(&[z, lab]);
        let logits = self.policy.forward(&mut tape, &self.store, x).unwrap();
        tape.value(logits).to_vec()
    }
}

impl AgentB {
    fn new(cfg: &AgentConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let input = cfg.policy_input_b();
        let policy = head(&mut store, rng, input, cfg.hidden, cfg.policy_output());
        let aim_value = head(&mut store, rng, input, cfg.hidden, 1);
        let opp_reward = head(&mut store, rng, input, cfg.hidden, 1);
        let opp_aim = head(&mut store, rng, input, cfg.hidden, cfg.policy_output());
        let intent = head(&mut store, rng, input, cfg.hidden, 2);
        let label_embed = label_table(&mut store, rng, cfg);
        Self {
            store,
            policy,
            aim_value,
            opp_reward,
            opp_aim,
            intent,
            label_embed,
        }
    }

    pub(crate) fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn all_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for net in [
            &self.policy,
            &self.aim_value,
            &self.opp_reward,
            &self.opp_aim,
            &self.intent,
        ] {
            ids.extend(net.params());
        }
        ids.push(self.label_embed);
        ids
    }

    /// Received message, label embedding, z_e: the shared input of every
    /// Agent B head.
    fn b_input(&self, tape: &mut Tape, embed_a: &[f64], label: usize, z_e: &[f64]) -> VarId {
        let e = tape.input(embed_a);
        let lab = tape.param_row(&self.store, self.label_embed, label);
        let z = tape.input(z_e);
        tape.concat(&[e, lab, z])
    }

    pub(crate) fn act_on_tape(
        &self,
        tape: &mut Tape,
        rng: &mut impl Rng,
        embed_a: &[f64],
        label: usize,
        z_e: &[f64],
        l: usize,
        k: usize,
    ) -> Result<TapeAct> {
        let x = self.b_input(tape, embed_a, label, z_e);
        let logits = self.policy.forward(tape, &self.store, x)?;
        sample_heads(tape, logits, rng, l, k)
    }

    pub(crate) fn aim_value_on_tape(
        &self,
        tape: &mut Tape,
        embed_a: &[f64],
        label: usize,
        z_e: &[f64],
    ) -> Result<VarId> {
        let x = self.b_input(tape, embed_a, label, z_e);
        self.aim_value.forward(tape, &self.store, x)
    }

    pub(crate) fn opp_reward_on_tape(
        &self,
        tape: &mut Tape,
        embed_a: &[f64],
        label: usize,
        z_e: &[f64],
    ) -> Result<VarId> {
        let x = self.b_input(tape, embed_a, label, z_e);
        self.opp_reward.forward(tape, &self.store, x)
    }

    pub(crate) fn opp_aim_on_tape(
        &self,
        tape: &mut Tape,
        embed_a: &[f64],
        label: usize,
        z_e: &[f64],
    ) -> Result<VarId> {
        let x = self.b_input(tape, embed_a, label, z_e);
        self.opp_aim.forward(tape, &self.store, x)
    }

    pub(crate) fn intent_on_tape(
        &self,
        tape: &mut Tape,
        embed_a: &[f64],
        label: usize,
        z_e: &[f64],
    ) -> Result<VarId> {
        let x = self.b_input(tape, embed_a, label, z_e);
        self.intent.forward(tape, &self.store, x)
    }

    #[cfg(test)]
    fn policy_logits(&self, embed_a: &[f64], label: usize, z_e: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = self.b_input(&mut tape, embed_a, label, z_e);
        let logits = self.policy.forward(&mut tape, &self.store, x).unwrap();
        tape.value(logits).to_vec()
    }
}

pub(crate) fn sample_heads(
    tape: &mut Tape,
    logits: VarId,
    rng: &mut impl Rng,
    l: usize,
    k: usize,
) -> Result<TapeAct> {
    let mut tokens = Vec::with_capacity(l);
    let mut log_probs = Vec::with_capacity(l);
    let mut entropies = Vec::with_capacity(l);
    for slot in 0..l {
        let s = tape.slice(logits, slot * k, k);
        let draw = categorical_sample(tape.value(s), rng)?;
        tokens.push(draw.index);
        log_probs.push(tape.log_prob(s, draw.index)?);
        entropies.push(tape.entropy(s));
    }
    Ok(TapeAct {
        aim: AimSequence { tokens },
        log_prob: tape.sum(&log_probs),
        entropy: tape.sum(&entropies),
    })
}

/// Both agents plus the frozen codebook they communicate through.
///
/// A single codebook instance is held here and read by both agents, so the
/// two sides of the channel see byte-identical symbol geometry.
#[derive(Debug, Clone)]
pub struct AgentPair {
    cfg: AgentConfig,
    codebook: Codebook,
    pub(crate) a: AgentA,
    pub(crate) b: AgentB,
}

impl AgentPair {
    pub fn new(cfg: AgentConfig, codebook: Codebook, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        codebook.validate()?;
        if codebook.k != cfg.k || codebook.d != cfg.d {
            return Err(AimError::Config(format!(
                "codebook is {}x{} but agent config expects {}x{}",
                codebook.k, codebook.d, cfg.k, cfg.d
            )));
        }
        let a = AgentA::new(&cfg, rng);
        let b = AgentB::new(&cfg, rng);
        Ok(Self { cfg, codebook, a, b })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    /// Embed an AIM sequence with the pair's shared codebook.
    pub fn embed(&self, aim: &AimSequence) -> Result<Vec<f64>> {
        aim.validate(self.cfg.l, self.cfg.k)?;
        embed_aim(aim, &self.codebook)
    }

    fn check_state(&self, z_e: &[f64], label: usize) -> Result<()> {
        if z_e.len() != self.cfg.embed_dim() {
            return Err(AimError::Config(format!(
                "z_e has length {}, expected {}",
                z_e.len(),
                self.cfg.embed_dim()
            )));
        }
        if label >= self.cfg.label_classes {
            return Err(AimError::Config(format!(
                "label {label} out of range for {} classes",
                self.cfg.label_classes
            )));
        }
        Ok(())
    }

    /// Agent A speaks from its perception.
    pub fn act_a(&self, z_e: &[f64], label: usize, rng: &mut impl Rng) -> Result<ActOutcome> {
        self.check_state(z_e, label)?;
        let mut tape = Tape::new();
        let act = self
            .a
            .act_on_tape(&mut tape, rng, z_e, label, self.cfg.l, self.cfg.k)?;
        Ok(ActOutcome {
            aim: act.aim,
            log_prob: tape.scalar(act.log_prob),
            entropy: tape.scalar(act.entropy),
        })
    }

    /// Agent B answers the received sequence.
    pub fn act_b(
        &self,
        aim_a: &AimSequence,
        label: usize,
        z_e: &[f64],
        rng: &mut impl Rng,
    ) -> Result<ActOutcome> {
        self.check_state(z_e, label)?;
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let act =
            self.b
                .act_on_tape(&mut tape, rng, &embed, label, z_e, self.cfg.l, self.cfg.k)?;
        Ok(ActOutcome {
            aim: act.aim,
            log_prob: tape.scalar(act.log_prob),
            entropy: tape.scalar(act.entropy),
        })
    }

    /// Joint state value from A's centralized critic.
    pub fn central_value(&self, z_e: &[f64], label: usize, aim_b: &AimSequence) -> Result<f64> {
        self.check_state(z_e, label)?;
        let embed = self.embed(aim_b)?;
        let mut tape = Tape::new();
        let v = self.a.central_value_on_tape(&mut tape, z_e, label, &embed)?;
        Ok(tape.scalar(v))
    }

    /// Expected joint reward of a message in context, per agent.
    pub fn predict_aim_value_a(&self, aim_a: &AimSequence, z_e: &[f64], label: usize) -> Result<f64> {
        self.check_state(z_e, label)?;
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let v = self.a.aim_value_on_tape(&mut tape, &embed, z_e, label)?;
        Ok(tape.scalar(v))
    }

    pub fn predict_aim_value_b(&self, aim_a: &AimSequence, label: usize, z_e: &[f64]) -> Result<f64> {
        self.check_state(z_e, label)?;
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let v = self.b.aim_value_on_tape(&mut tape, &embed, label, z_e)?;
        Ok(tape.scalar(v))
    }

    /// Predicted opponent individual reward, per agent.
    pub fn predict_opponent_reward_a(
        &self,
        aim_a: &AimSequence,
        z_e: &[f64],
        label: usize,
    ) -> Result<f64> {
        self.check_state(z_e, label)?;
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let v = self.a.opp_reward_on_tape(&mut tape, &embed, z_e, label)?;
        Ok(tape.scalar(v))
    }

    pub fn predict_opponent_reward_b(
        &self,
        aim_a: &AimSequence,
        label: usize,
        z_e: &[f64],
    ) -> Result<f64> {
        self.check_state(z_e, label)?;
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let v = self.b.opp_reward_on_tape(&mut tape, &embed, label, z_e)?;
        Ok(tape.scalar(v))
    }

    /// Per-position logits over the codebook for the opponent's next sequence.
    pub fn predict_opponent_aim_a(
        &self,
        aim_a: &AimSequence,
        label: usize,
    ) -> Result<Vec<Vec<f64>>> {
        if label >= self.cfg.label_classes {
            return Err(AimError::Config(format!(
                "label {label} out of range for {} classes",
                self.cfg.label_classes
            )));
        }
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let logits = self.a.opp_aim_on_tape(&mut tape, &embed, label)?;
        Ok(split_rows(tape.value(logits), self.cfg.l, self.cfg.k))
    }

    pub fn predict_opponent_aim_b(
        &self,
        aim_a: &AimSequence,
        label: usize,
        z_e: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_state(z_e, label)?;
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let logits = self.b.opp_aim_on_tape(&mut tape, &embed, label, z_e)?;
        Ok(split_rows(tape.value(logits), self.cfg.l, self.cfg.k))
    }

    /// Cooperate/defect logits decoded from a message.
    pub fn predict_intent_a(&self, aim_a: &AimSequence, label: usize) -> Result<[f64; 2]> {
        if label >= self.cfg.label_classes {
            return Err(AimError::Config(format!(
                "label {label} out of range for {} classes",
                self.cfg.label_classes
            )));
        }
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let logits = self.a.intent_on_tape(&mut tape, &embed, label)?;
        let v = tape.value(logits);
        Ok([v[0], v[1]])
    }

    pub fn predict_intent_b(
        &self,
        aim_a: &AimSequence,
        label: usize,
        z_e: &[f64],
    ) -> Result<[f64; 2]> {
        self.check_state(z_e, label)?;
        let embed = self.embed(aim_a)?;
        let mut tape = Tape::new();
        let logits = self.b.intent_on_tape(&mut tape, &embed, label, z_e)?;
        let v = tape.value(logits);
        Ok([v[0], v[1]])
    }

    /// Finite-difference check of every head's backward pass.
    ///
    /// Returns (head name, max relative error) per head. The sampled tokens
    /// and the synthetic inputs are drawn once from `seed`, so each closure
    /// is deterministic as the checker requires.
    pub fn grad_check_heads(&mut self, seed: u64, epsilon: f64) -> Result<Vec<(String, f64)>> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = self.cfg;
        let z_e: Vec<f64> = (0..cfg.embed_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = rng.random_range(0..cfg.label_classes);
        let aim = AimSequence {
            tokens: (0..cfg.l).map(|_| rng.random_range(0..cfg.k)).collect(),
        };
        let embed = self.embed(&aim)?;
        let tokens = aim.tokens.clone();
        let target: Vec<usize> = (0..cfg.l).map(|_| rng.random_range(0..cfg.k)).collect();
        let reward = rng.random_range(-5.0..5.0);
        let mut out = Vec::new();

        let a = self.a.clone();
        let with_label = |ids: &Mlp, a: &AgentA| {
            let mut v = ids.params();
            v.push(a.label_embed);
            v
        };

        // Policy heads check the full score-function surface: log-prob of
        // the fixed tokens scaled by a reward, minus entropy.
        {
            let params = with_label(&a.policy, &a);
            let (z, t) = (z_e.clone(), tokens.clone());
            let err = grad_check(
                self.a.store_mut(),
                &params,
                |tape, store| {
                    let zv = tape.input(&z);
                    let lab = tape.param_row(store, a.label_embed, label);
                    let x = tape.concat(&[zv, lab]);
                    let logits = a.policy.forward(tape, store, x)?;
                    policy_score(tape, logits, &t, cfg.k, reward)
                },
                epsilon,
            )?;
            out.push(("a.policy".to_string(), err));
        }
        for (name, net) in [
            ("a.central_value", &a.central_value),
            ("a.aim_value", &a.aim_value),
            ("a.opp_reward", &a.opp_reward),
        ] {
            let params = with_label(net, &a);
            let (z, e) = (z_e.clone(), embed.clone());
            let net = net.clone();
            let first = name == "a.central_value";
            let err = grad_check(
                self.a.store_mut(),
                &params,
                |tape, store| {
                    let x = if first {
                        let zv = tape.input(&z);
                        let lab = tape.param_row(store, a.label_embed, label);
                        let ev = tape.input(&e);
                        tape.concat(&[zv, lab, ev])
                    } else {
                        let ev = tape.input(&e);
                        let zv = tape.input(&z);
                        let lab = tape.param_row(store, a.label_embed, label);
                        tape.concat(&[ev, zv, lab])
                    };
                    let v = net.forward(tape, store, x)?;
                    tape.mse(v, &[reward])
                },
                epsilon,
            )?;
            out.push((name.to_string(), err));
        }
        {
            let params = with_label(&a.opp_aim, &a);
            let (e, t) = (embed.clone(), target.clone());
            let err = grad_check(
                self.a.store_mut(),
                &params,
                |tape, store| {
                    let ev = tape.input(&e);
                    let lab = tape.param_row(store, a.label_embed, label);
                    let x = tape.concat(&[ev, lab]);
                    let logits = a.opp_aim.forward(tape, store, x)?;
                    sequence_cross_entropy(tape, logits, &t, cfg.k)
                },
                epsilon,
            )?;
            out.push(("a.opp_aim".to_string(), err));
        }
        {
            let params = with_label(&a.intent, &a);
            let e = embed.clone();
            let err = grad_check(
                self.a.store_mut(),
                &params,
                |tape, store| {
                    let ev = tape.input(&e);
                    let lab = tape.param_row(store, a.label_embed, label);
                    let x = tape.concat(&[ev, lab]);
                    let logits = a.intent.forward(tape, store, x)?;
                    tape.cross_entropy(logits, 1)
                },
                epsilon,
            )?;
            out.push(("a.intent".to_string(), err));
        }

        let b = self.b.clone();
        let b_input = |tape: &mut Tape, store: &ParamStore, e: &[f64], z: &[f64]| {
            let ev = tape.input(e);
            let lab = tape.param_row(store, b.label_embed, label);
            let zv = tape.input(z);
            tape.concat(&[ev, lab, zv])
        };
        {
            let mut params = b.policy.params();
            params.push(b.label_embed);
            let (e, z, t) = (embed.clone(), z_e.clone(), tokens.clone());
            let err = grad_check(
                self.b.store_mut(),
                &params,
                |tape, store| {
                    let x = b_input(tape, store, &e, &z);
                    let logits = b.policy.forward(tape, store, x)?;
                    policy_score(tape, logits, &t, cfg.k, reward)
                },
                epsilon,
            )?;
            out.push(("b.policy".to_string(), err));
        }
        for (name, net) in [("b.aim_value", &b.aim_value), ("b.opp_reward", &b.opp_reward)] {
            let mut params = net.params();
            params.push(b.label_embed);
            let (e, z) = (embed.clone(), z_e.clone());
            let net = net.clone();
            let err = grad_check(
                self.b.store_mut(),
                &params,
                |tape, store| {
                    let x = b_input(tape, store, &e, &z);
                    let v = net.forward(tape, store, x)?;
                    tape.mse(v, &[reward])
                },
                epsilon,
            )?;
            out.push((name.to_string(), err));
        }
        {
            let mut params = b.opp_aim.params();
            params.push(b.label_embed);
            let (e, z, t) = (embed.clone(), z_e.clone(), target.clone());
            let err = grad_check(
                self.b.store_mut(),
                &params,
                |tape, store| {
                    let x = b_input(tape, store, &e, &z);
                    let logits = b.opp_aim.forward(tape, store, x)?;
                    sequence_cross_entropy(tape, logits, &t, cfg.k)
                },
                epsilon,
            )?;
            out.push(("b.opp_aim".to_string(), err));
        }
        {
            let mut params = b.intent.params();
            params.push(b.label_embed);
            let (e, z) = (embed.clone(), z_e.clone());
            let err = grad_check(
                self.b.store_mut(),
                &params,
                |tape, store| {
                    let x = b_input(tape, store, &e, &z);
                    let logits = b.intent.forward(tape, store, x)?;
                    tape.cross_entropy(logits, 0)
                },
                epsilon,
            )?;
            out.push(("b.intent".to_string(), err));
        }
        Ok(out)
    }
}

/// −log π(tokens)·reward − entropy over L K-wide heads, as one scalar.
fn policy_score(
    tape: &mut Tape,
    logits: VarId,
    tokens: &[usize],
    k: usize,
    reward: f64,
) -> Result<VarId> {
    let mut terms = Vec::new();
    for (slot, &t) in tokens.iter().enumerate() {
        let s = tape.slice(logits, slot * k, k);
        let lp = tape.log_prob(s, t)?;
        terms.push(tape.scale(lp, -reward));
        let h = tape.entropy(s);
        terms.push(tape.scale(h, -1.0));
    }
    Ok(tape.sum(&terms))
}

/// Sum of per-position cross-entropies against target tokens.
pub(crate) fn sequence_cross_entropy(
    tape: &mut Tape,
    logits: VarId,
    tokens: &[usize],
    k: usize,
) -> Result<VarId> {
    let mut terms = Vec::new();
    for (slot, &t) in tokens.iter().enumerate() {
        let s = tape.slice(logits, slot * k, k);
        terms.push(tape.cross_entropy(s, t)?);
    }
    Ok(tape.sum(&terms))
}

fn split_rows(flat: &[f64], l: usize, k: usize) -> Vec<Vec<f64>> {
    (0..l).map(|slot| flat[slot * k..(slot + 1) * k].to_vec()).collect()
}

/// Log-probability of a whole sequence under per-slot logits, computed
/// outside any tape.
pub fn sequence_log_prob(logits: &[f64], tokens: &[usize], k: usize) -> f64 {
    tokens
        .iter()
        .enumerate()
        .map(|(slot, &t)| log_softmax(&logits[slot * k..(slot + 1) * k])[t])
        .sum()
}

#[cfg(test)]
impl AgentPair {
    /// Zero every parameter of both agents.
    pub(crate) fn zero_all(&mut self) {
        for store in [&mut self.a.store, &mut self.b.store] {
            for id in store.ids().collect::<Vec<_>>() {
                store.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Zero a policy and pin its output bias so the given tokens are drawn
    /// with probability ≈ 1.
    pub(crate) fn force_policy_a(&mut self, tokens: &[usize]) {
        force(&mut self.a.store, &self.a.policy, tokens, self.cfg.k);
    }

    pub(crate) fn force_policy_b(&mut self, tokens: &[usize]) {
        force(&mut self.b.store, &self.b.policy, tokens, self.cfg.k);
    }

    /// Zero a scalar head and pin its output bias so it always predicts `v`.
    pub(crate) fn pin_aim_value_a(&mut self, v: f64) {
        pin_scalar(&mut self.a.store, &self.a.aim_value, v);
    }

    pub(crate) fn pin_opp_reward_a(&mut self, v: f64) {
        pin_scalar(&mut self.a.store, &self.a.opp_reward, v);
    }
}

#[cfg(test)]
fn pin_scalar(store: &mut ParamStore, net: &Mlp, v: f64) {
    let params = net.params();
    for id in &params {
        store.get_mut(*id).values.iter_mut().for_each(|x| *x = 0.0);
    }
    store.get_mut(*params.last().unwrap()).values[0] = v;
}

#[cfg(test)]
fn force(store: &mut ParamStore, policy: &Mlp, tokens: &[usize], k: usize) {
    let params = policy.params();
    for id in &params {
        store.get_mut(*id).values.iter_mut().for_each(|v| *v = 0.0);
    }
    let bias = *params.last().unwrap();
    for (slot, &t) in tokens.iter().enumerate() {
        store.get_mut(bias).values[slot * k + t] = 50.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{softmax, softmax_entropy, Optimizer, UpdateRule};
    use crate::env::{action_of, Action};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_codebook(k: usize, d: usize) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let vectors = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Codebook { k, d, vectors }
    }

    fn default_pair(seed: u64) -> AgentPair {
        let cfg = AgentConfig::default();
        let codebook = test_codebook(cfg.k, cfg.d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AgentPair::new(cfg, codebook, &mut rng).unwrap()
    }

    fn small_pair(seed: u64) -> AgentPair {
        let cfg = AgentConfig {
            k: 8,
            d: 4,
            l: 2,
            label_classes: 4,
            label_embed_dim: 4,
            hidden: 16,
        };
        let codebook = test_codebook(cfg.k, cfg.d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AgentPair::new(cfg, codebook, &mut rng).unwrap()
    }

    #[test]
    fn embed_single_token_is_that_row() {
        let cb = test_codebook(8, 4);
        let aim = AimSequence { tokens: vec![3] };
        assert_eq!(embed_aim(&aim, &cb).unwrap(), cb.row(3));
    }

    #[test]
    fn embed_repeated_token_repeats_the_row() {
        let cb = test_codebook(8, 4);
        let aim = AimSequence { tokens: vec![0, 0] };
        let e = embed_aim(&aim, &cb).unwrap();
        assert_eq!(&e[..4], cb.row(0));
        assert_eq!(&e[4..], cb.row(0));
    }

    #[test]
    fn embed_length_is_l_times_d_for_every_token() {
        let cb = test_codebook(8, 4);
        for t0 in 0..8 {
            for t1 in 0..8 {
                let aim = AimSequence { tokens: vec![t0, t1] };
                assert_eq!(embed_aim(&aim, &cb).unwrap().len(), 8);
            }
        }
    }

    #[test]
    fn embed_rejects_out_of_range_token() {
        let cb = test_codebook(8, 4);
        let aim = AimSequence { tokens: vec![8] };
        assert!(matches!(embed_aim(&aim, &cb), Err(AimError::Usage(_))));
    }

    #[test]
    fn pair_rejects_mismatched_codebook() {
        let cfg = AgentConfig::default();
        let cb = test_codebook(32, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            AgentPair::new(cfg, cb, &mut rng),
            Err(AimError::Config(_))
        ));
    }

    #[test]
    fn pair_rejects_degenerate_codebook() {
        let cfg = AgentConfig::default();
        let cb = Codebook {
            k: cfg.k,
            d: cfg.d,
            vectors: vec![0.0; cfg.k * cfg.d],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AgentPair::new(cfg, cb, &mut rng).is_err());
    }

    #[test]
    fn forced_policy_acts_deterministically_with_log_prob_near_zero() {
        let mut pair = default_pair(1);
        pair.force_policy_a(&[10, 20]);
        let z_e = vec![0.3; 16];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let out = pair.act_a(&z_e, 3, &mut rng).unwrap();
            assert_eq!(out.aim.tokens, vec![10, 20]);
            assert!(out.log_prob.abs() < 1e-9);
            assert!(out.entropy.abs() < 1e-9);
        }
        pair.force_policy_b(&[7, 7]);
        let aim_a = AimSequence { tokens: vec![10, 20] };
        let out = pair.act_b(&aim_a, 3, &z_e, &mut rng).unwrap();
        assert_eq!(out.aim.tokens, vec![7, 7]);
        assert!(out.log_prob.abs() < 1e-9);
    }

    #[test]
    fn uniform_policy_entropy_is_l_ln_k() {
        let mut pair = default_pair(2);
        pair.zero_all();
        let z_e = vec![0.5; 16];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = pair.act_a(&z_e, 0, &mut rng).unwrap();
        let expect = 2.0 * (64.0f64).ln();
        assert!((out.entropy - expect).abs() < 1e-9, "entropy {}", out.entropy);
        assert!((out.log_prob - (-expect)).abs() < 1e-9);
        let out_b = pair
            .act_b(&out.aim, 0, &z_e, &mut rng)
            .unwrap();
        assert!((out_b.entropy - expect).abs() < 1e-9);
    }

    #[test]
    fn sampled_tokens_stay_in_range_and_outcomes_stay_bounded() {
        let pair = default_pair(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z_e: Vec<f64> = (0..16).map(|i| (i as f64 / 8.0) - 1.0).collect();
        let max_h = 2.0 * (64.0f64).ln();
        for i in 0..10_000 {
            let label = i % 10;
            let out = pair.act_a(&z_e, label, &mut rng).unwrap();
            assert!(out.aim.tokens.iter().all(|&t| t < 64));
            assert!(out.log_prob <= 0.0);
            assert!(out.entropy >= 0.0 && out.entropy <= max_h + 1e-9);
        }
    }

    #[test]
    fn act_is_deterministic_for_a_fixed_seed() {
        let pair = default_pair(4);
        let z_e = vec![0.2; 16];
        let one = pair.act_a(&z_e, 5, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let two = pair.act_a(&z_e, 5, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn log_prob_matches_product_of_head_probabilities() {
        let pair = default_pair(5);
        let z_e: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64) / 5.0 - 0.4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for label in 0..10 {
            let out = pair.act_a(&z_e, label, &mut rng).unwrap();
            let logits = pair.a.policy_logits(&z_e, label);
            let expect = sequence_log_prob(&logits, &out.aim.tokens, 64);
            assert!((out.log_prob - expect).abs() < 1e-9);
            let prob_product: f64 = out
                .aim
                .tokens
                .iter()
                .enumerate()
                .map(|(slot, &t)| softmax(&logits[slot * 64..(slot + 1) * 64])[t])
                .product();
            assert!((out.log_prob.exp() - prob_product).abs() < 1e-9);
        }
    }

    #[test]
    fn b_logits_respond_to_the_received_message() {
        let pair = default_pair(6);
        let z_e = vec![0.1; 16];
        let mut distinct = std::collections::HashSet::new();
        for t in 0..64 {
            let aim = AimSequence { tokens: vec![t, 0] };
            let embed = pair.embed(&aim).unwrap();
            let logits = pair.b.policy_logits(&embed, 2, &z_e);
            distinct.insert(
                logits
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            );
        }
        assert!(distinct.len() > 1, "all {} first tokens gave identical logits", 64);
    }

    #[test]
    fn zeroed_b_ignores_the_received_message() {
        let mut pair = default_pair(7);
        pair.zero_all();
        let z_e = vec![0.1; 16];
        let mut distinct = std::collections::HashSet::new();
        for t in 0..64 {
            let aim = AimSequence { tokens: vec![t, t] };
            let embed = pair.embed(&aim).unwrap();
            let logits = pair.b.policy_logits(&embed, 2, &z_e);
            distinct.insert(logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        assert_eq!(distinct.len(), 1);
    }

    #[test]
    fn zero_parameters_give_zero_valued_heads() {
        let mut pair = default_pair(8);
        pair.zero_all();
        let z_e = vec![0.4; 16];
        let aim = AimSequence { tokens: vec![1, 2] };
        assert_eq!(pair.central_value(&z_e, 1, &aim).unwrap(), 0.0);
        assert_eq!(pair.predict_aim_value_a(&aim, &z_e, 1).unwrap(), 0.0);
        assert_eq!(pair.predict_aim_value_b(&aim, 1, &z_e).unwrap(), 0.0);
        assert_eq!(pair.predict_opponent_reward_a(&aim, &z_e, 1).unwrap(), 0.0);
        assert_eq!(pair.predict_opponent_reward_b(&aim, 1, &z_e).unwrap(), 0.0);
    }

    #[test]
    fn head_input_widths_follow_the_dimension_formulas() {
        let cfg = AgentConfig::default();
        assert_eq!(cfg.policy_input_a(), 24);
        assert_eq!(cfg.critic_input(), 40);
        assert_eq!(cfg.policy_input_b(), 40);
        let pair = default_pair(9);
        let (_, a_policy_cols) = pair.a.store.get(pair.a.policy.params()[0]).dims2();
        assert_eq!(a_policy_cols, 24);
        let (_, critic_cols) = pair.a.store.get(pair.a.central_value.params()[0]).dims2();
        assert_eq!(critic_cols, 40);
        let (_, b_policy_cols) = pair.b.store.get(pair.b.policy.params()[0]).dims2();
        assert_eq!(b_policy_cols, 40);
        let (rows, _) = pair.a.store.get(pair.a.policy.params()[4]).dims2();
        assert_eq!(rows, 128);
    }

    #[test]
    fn wrong_z_e_length_is_rejected() {
        let pair = default_pair(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            pair.act_a(&[0.0; 8], 0, &mut rng),
            Err(AimError::Config(_))
        ));
        let aim = AimSequence { tokens: vec![0, 0] };
        assert!(pair.central_value(&[0.0; 8], 0, &aim).is_err());
        assert!(pair.act_a(&[0.0; 16], 10, &mut rng).is_err());
    }

    #[test]
    fn central_value_regresses_to_a_constant_target() {
        let mut pair = small_pair(11);
        let z_e = vec![0.2; 8];
        let aim = AimSequence { tokens: vec![1, 5] };
        let embed = pair.embed(&aim).unwrap();
        let params = {
            let mut p = pair.a.central_value.params();
            p.push(pair.a.label_embed);
            p
        };
        let mut opt = Optimizer::new(UpdateRule::adam(0.01));
        for _ in 0..300 {
            let mut tape = Tape::new();
            let v = pair.a.central_value_on_tape(&mut tape, &z_e, 1, &embed).unwrap();
            let loss = tape.mse(v, &[10.0]).unwrap();
            tape.backward(loss, pair.a.store_mut()).unwrap();
            opt.step(pair.a.store_mut(), &params);
        }
        let got = pair.central_value(&z_e, 1, &aim).unwrap();
        assert!((got - 10.0).abs() < 0.5, "central value {got}");
    }

    #[test]
    fn aim_value_heads_regress_to_the_joint_reward() {
        let mut pair = small_pair(12);
        let z_e = vec![-0.1; 8];
        let aim = AimSequence { tokens: vec![2, 6] };
        let embed = pair.embed(&aim).unwrap();
        let a_params = {
            let mut p = pair.a.aim_value.params();
            p.push(pair.a.label_embed);
            p
        };
        let b_params = {
            let mut p = pair.b.aim_value.params();
            p.push(pair.b.label_embed);
            p
        };
        let mut opt_a = Optimizer::new(UpdateRule::adam(0.01));
        let mut opt_b = Optimizer::new(UpdateRule::adam(0.01));
        for _ in 0..300 {
            let mut tape = Tape::new();
            let v = pair.a.aim_value_on_tape(&mut tape, &embed, &z_e, 2).unwrap();
            let loss = tape.mse(v, &[10.0]).unwrap();
            tape.backward(loss, pair.a.store_mut()).unwrap();
            opt_a.step(pair.a.store_mut(), &a_params);

            let mut tape = Tape::new();
            let v = pair.b.aim_value_on_tape(&mut tape, &embed, 2, &z_e).unwrap();
            let loss = tape.mse(v, &[10.0]).unwrap();
            tape.backward(loss, pair.b.store_mut()).unwrap();
            opt_b.step(pair.b.store_mut(), &b_params);
        }
        assert!((pair.predict_aim_value_a(&aim, &z_e, 2).unwrap() - 10.0).abs() < 0.5);
        assert!((pair.predict_aim_value_b(&aim, 2, &z_e).unwrap() - 10.0).abs() < 0.5);
    }

    #[test]
    fn opponent_reward_head_regresses_to_a_constant() {
        let mut pair = small_pair(13);
        let z_e = vec![0.3; 8];
        let aim = AimSequence { tokens: vec![4, 1] };
        let embed = pair.embed(&aim).unwrap();
        let params = {
            let mut p = pair.a.opp_reward.params();
            p.push(pair.a.label_embed);
            p
        };
        let mut opt = Optimizer::new(UpdateRule::adam(0.01));
        for _ in 0..300 {
            let mut tape = Tape::new();
            let v = pair.a.opp_reward_on_tape(&mut tape, &embed, &z_e, 0).unwrap();
            let loss = tape.mse(v, &[-2.0]).unwrap();
            tape.backward(loss, pair.a.store_mut()).unwrap();
            opt.step(pair.a.store_mut(), &params);
        }
        assert!((pair.predict_opponent_reward_a(&aim, &z_e, 0).unwrap() + 2.0).abs() < 0.5);
    }

    #[test]
    fn uniform_opponent_predictor_cross_entropy_is_ln_k() {
        let mut pair = default_pair(14);
        pair.zero_all();
        let aim = AimSequence { tokens: vec![3, 9] };
        let rows = pair.predict_opponent_aim_a(&aim, 0).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert_eq!(row.len(), 64);
            let p = softmax(row);
            let ce = -p[5].ln();
            assert!((ce - (64.0f64).ln()).abs() < 1e-9);
        }
        let z_e = vec![0.0; 16];
        let rows_b = pair.predict_opponent_aim_b(&aim, 0, &z_e).unwrap();
        assert_eq!(rows_b.len(), 2);
        assert_eq!(rows_b[0].len(), 64);
    }

    #[test]
    fn opponent_predictor_learns_a_constant_sequence() {
        let mut pair = small_pair(15);
        let aim = AimSequence { tokens: vec![2, 3] };
        let embed = pair.embed(&aim).unwrap();
        let params = {
            let mut p = pair.a.opp_aim.params();
            p.push(pair.a.label_embed);
            p
        };
        let mut opt = Optimizer::new(UpdateRule::adam(0.02));
        for _ in 0..200 {
            let mut tape = Tape::new();
            let logits = pair.a.opp_aim_on_tape(&mut tape, &embed, 1).unwrap();
            let loss = sequence_cross_entropy(&mut tape, logits, &[5, 5], 8).unwrap();
            tape.backward(loss, pair.a.store_mut()).unwrap();
            opt.step(pair.a.store_mut(), &params);
        }
        let rows = pair.predict_opponent_aim_a(&aim, 1).unwrap();
        for row in rows {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, 5);
        }
    }

    #[test]
    fn untrained_uniform_intent_cross_entropy_is_ln_2() {
        let mut pair = default_pair(16);
        pair.zero_all();
        let aim = AimSequence { tokens: vec![10, 3] };
        let logits = pair.predict_intent_a(&aim, 0).unwrap();
        let p = softmax(&logits);
        assert!(((-p[0].ln()) - (2.0f64).ln()).abs() < 1e-9);
        assert!((softmax_entropy(&logits) - (2.0f64).ln()).abs() < 1e-9);
    }

    fn train_intent_a(pair: &mut AgentPair, aims: &[AimSequence], steps: usize) {
        let k = pair.cfg.k;
        let params = {
            let mut p = pair.a.intent.params();
            p.push(pair.a.label_embed);
            p
        };
        let mut opt = Optimizer::new(UpdateRule::adam(0.02));
        let embeds: Vec<(Vec<f64>, usize)> = aims
            .iter()
            .map(|aim| {
                let class = match action_of(aim, k) {
                    Action::Cooperate => 0,
                    Action::Defect => 1,
                };
                (pair.embed(aim).unwrap(), class)
            })
            .collect();
        for _ in 0..steps {
            for (embed, class) in &embeds {
                let mut tape = Tape::new();
                let logits = pair.a.intent_on_tape(&mut tape, embed, 0).unwrap();
                let loss = tape.cross_entropy(logits, *class).unwrap();
                let loss = tape.scale(loss, 1.0 / embeds.len() as f64);
                tape.backward(loss, pair.a.store_mut()).unwrap();
            }
            opt.step(pair.a.store_mut(), &params);
        }
    }

    #[test]
    fn trained_intent_recovers_the_action_rule_on_held_out_sequences() {
        let cfg = AgentConfig {
            k: 16,
            d: 4,
            l: 2,
            label_classes: 4,
            label_embed_dim: 4,
            hidden: 32,
        };
        let codebook = test_codebook(cfg.k, cfg.d);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pair = AgentPair::new(cfg, codebook, &mut rng).unwrap();
        let k = cfg.k;
        // Half the (first, second) grid trains the head; the other half is
        // held out, with every token appearing in both positions on both
        // sides of the split.
        let train: Vec<AimSequence> = (0..k)
            .flat_map(|t| {
                (0..k / 2).map(move |j| AimSequence {
                    tokens: vec![t, (t * 3 + 2 * j) % k],
                })
            })
            .collect();
        let seen: std::collections::HashSet<Vec<usize>> =
            train.iter().map(|a| a.tokens.clone()).collect();
        train_intent_a(&mut pair, &train, 300);
        let mut hits = 0;
        let mut total = 0;
        for t in 0..k {
            for s in 0..k {
                if seen.contains(&vec![t, s]) {
                    continue;
                }
                let aim = AimSequence { tokens: vec![t, s] };
                let logits = pair.predict_intent_a(&aim, 0).unwrap();
                let predicted = if logits[0] >= logits[1] {
                    Action::Cooperate
                } else {
                    Action::Defect
                };
                if predicted == action_of(&aim, k) {
                    hits += 1;
                }
                total += 1;
            }
        }
        assert!(
            hits * 100 >= total * 95,
            "intent matched action rule on {hits}/{total} held-out sequences"
        );
    }

    #[test]
    fn trained_intent_separates_low_and_high_first_tokens_at_full_scale() {
        let mut pair = default_pair(18);
        let train: Vec<AimSequence> = (0..64)
            .map(|t| AimSequence { tokens: vec![t, (t * 7 + 1) % 64] })
            .collect();
        train_intent_a(&mut pair, &train, 60);
        let low = AimSequence { tokens: vec![10, 11] };
        let high = AimSequence { tokens: vec![50, 51] };
        let l10 = pair.predict_intent_a(&low, 0).unwrap();
        let l50 = pair.predict_intent_a(&high, 0).unwrap();
        assert!(l10[0] > l10[1], "first token 10 should decode to cooperate");
        assert!(l50[1] > l50[0], "first token 50 should decode to defect");
    }

    #[test]
    fn gradient_check_passes_for_every_head() {
        let mut pair = small_pair(19);
        for (name, err) in pair.grad_check_heads(7, 1e-5).unwrap() {
            assert!(err < 1e-4, "head {name} max relative error {err}");
        }
    }

    #[test]
    fn grad_check_reports_all_eleven_heads() {
        let mut pair = small_pair(20);
        let rows = pair.grad_check_heads(1, 1e-5).unwrap();
        assert_eq!(rows.len(), 11);
        let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"a.policy"));
        assert!(names.contains(&"b.intent"));
    }
}
