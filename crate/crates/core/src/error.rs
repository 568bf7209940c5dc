use std::io;

use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum OccError {
    /// Input tensors or values that do not satisfy an operation's contract.
    #[error("rejected input: {0}")]
    InvalidInput(String),
    /// Inconsistent configuration (weights, grid, conv geometry, matrices).
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or unsupported file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("scene generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl OccError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        OccError::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        OccError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, OccError>;
