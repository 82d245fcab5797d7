use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty block: {0}")]
    EmptyBlock(&'static str),

    #[error("empty channel: signal and dark click probabilities are both zero")]
    EmptyChannel,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("pulse-level simulation of {gates} gates exceeds the cap of {cap}; use rate_level mode")]
    CapExceeded { gates: u64, cap: u64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("block too small: sample of {sample} bits is below the floor of {floor}")]
    BlockTooSmall { sample: usize, floor: usize },

    #[error("reconciliation failed: verification hashes differ after {passes} passes")]
    ReconciliationFailed { passes: usize },

    #[error("toeplitz seed must be {expected} bits, got {actual}")]
    SeedLength { expected: usize, actual: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
