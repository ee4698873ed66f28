//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the training engine, protocol layers and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or feature dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A parameter violates its precondition.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// Not enough samples to satisfy a partitioning or batching request.
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    /// A peer-protocol violation (bad message, dimension mismatch mid-session).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An experiment configuration field is missing or malformed.
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A run aborted before completion (for example the cluster shrank below
    /// two devices). Partial outputs may exist.
    #[error("run aborted: {0}")]
    Aborted(String),

    /// Filesystem failure while writing metrics or checkpoints.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A checkpoint file is corrupt or has the wrong magic/version.
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
