//! Two-agent emergent-communication lab.
//!
//! Agents exchange fixed-length sequences of discrete codes drawn from a
//! shared learned codebook and are trained with REINFORCE on a contextual
//! prisoner's dilemma. The crate bundles the differentiable substrate the
//! networks are built from, the codebook autoencoder, the game environment,
//! both agent architectures, the training loops, and the code-usage
//! analysis toolkit behind the `aimlab` CLI.

pub mod agents;
pub mod analysis;
pub mod cli;
pub mod diffcore;
pub mod env;
pub mod error;
pub mod trainer;
pub mod vqvae;

pub use error::AimError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, AimError>;
