//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type. The CLI maps variants onto stable exit codes:
/// configuration/usage problems exit 2, numerical/training failures exit 3.
#[derive(Debug, Error)]
pub enum AimError {
    /// Bad dimensions, invalid config values, missing files named in a config.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse, e.g. backward without a completed forward pass.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values encountered during computation.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training diverged; carries the epoch or episode where it happened.
    #[error("training error at {unit} {index}: {message}")]
    Training {
        unit: &'static str,
        index: usize,
        message: String,
    },

    /// Analysis input too small to produce a meaningful result.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// File format violations (checkpoints, IDX files, run logs).
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AimError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        AimError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        AimError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Exit code for the CLI contract: 2 usage/config, 3 numerical/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            AimError::Config(_)
            | AimError::Usage(_)
            | AimError::Format { .. }
            | AimError::Io { .. }
            | AimError::InsufficientData(_) => 2,
            AimError::Numerical(_) | AimError::Training { .. } => 3,
        }
    }
}
