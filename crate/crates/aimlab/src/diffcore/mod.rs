//! Minimal differentiable-computation substrate.
//!
//! Everything the networks in this crate are built from: a parameter store,
//! a tape that records forward operations and replays them in reverse to
//! accumulate gradients, dense layers with tanh/sigmoid nonlinearities,
//! categorical sampling, loss primitives, a finite-difference gradient
//! checker, and first-order optimizers. 64-bit floats throughout.

mod gradcheck;
mod nets;
mod optim;
mod param;
mod sample;
mod tape;

pub use gradcheck::grad_check;
pub use nets::{Activation, Mlp};
pub use optim::{Optimizer, UpdateRule};
pub use param::{ParamId, ParamStore, Parameter};
pub use sample::{categorical_sample, log_softmax, softmax, softmax_entropy, CategoricalDraw};
pub use tape::{Tape, VarId};
