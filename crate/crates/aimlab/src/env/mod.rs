//! Contextual prisoner's dilemma: task signals, the first-token action
//! rule, and the parity-dependent payoff matrix.

mod dataset;

pub use dataset::Dataset;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::vqvae::AimSequence;
use crate::{AimError, Result};

/// The two game moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "C")]
    Cooperate,
    #[serde(rename = "D")]
    Defect,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Cooperate => write!(f, "C"),
            Action::Defect => write!(f, "D"),
        }
    }
}

/// One perceived game input: an image, its class label, and the label's
/// parity bit that modulates the payoff matrix.
#[derive(Debug, Clone)]
pub struct TaskSignal {
    pub image: Vec<f64>,
    pub label: u8,
    pub context_bit: u8,
}

/// Rewards for one round. `joint` is always the exact sum of the two
/// individual rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardPair {
    pub r_a: f64,
    pub r_b: f64,
    pub joint: f64,
}

impl RewardPair {
    fn new(r_a: f64, r_b: f64) -> Self {
        Self {
            r_a,
            r_b,
            joint: r_a + r_b,
        }
    }
}

/// Draws one item uniformly and derives the context bit from label parity.
pub fn sample_signal<R: Rng>(dataset: &Dataset, rng: &mut R) -> Result<TaskSignal> {
    if dataset.is_empty() {
        return Err(AimError::Config("cannot sample from an empty dataset".into()));
    }
    let i = rng.random_range(0..dataset.len());
    let label = dataset.label(i);
    Ok(TaskSignal {
        image: dataset.image(i).to_vec(),
        label,
        context_bit: label % 2,
    })
}

/// Maps a message to a move: cooperate iff the first token is below K/2.
pub fn action_of(aim: &AimSequence, k: usize) -> Action {
    assert!(!aim.tokens.is_empty(), "aim sequence must hold at least one token");
    if aim.tokens[0] * 2 < k {
        Action::Cooperate
    } else {
        Action::Defect
    }
}

/// Payoff matrix. `parity` 0 means even context. Cooperation pays more on
/// even rounds; being defected against costs more on odd rounds.
///
/// On even parity mutual cooperation and unilateral defection both pay the
/// row player 5, so the classical strict temptation inequality degenerates
/// to equality. That is what the reward definition says; left as is.
pub fn payoff(a: Action, b: Action, parity: u8) -> RewardPair {
    assert!(parity <= 1, "parity must be 0 or 1");
    let even = parity == 0;
    let coop_bonus = if even { 1.0 } else { 0.0 };
    let sucker_penalty = if even { 0.0 } else { 1.0 };
    use Action::{Cooperate as C, Defect as D};
    match (a, b) {
        (C, C) => RewardPair::new(4.0 + coop_bonus, 4.0 + coop_bonus),
        (C, D) => RewardPair::new(-1.0 - sucker_penalty, 5.0),
        (D, C) => RewardPair::new(5.0, -1.0 - sucker_penalty),
        (D, D) => RewardPair::new(0.0, 0.0),
    }
}
