//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by simulation, configuration and I/O paths.
#[derive(Debug, Error)]
pub enum Error {
    /// A state vector contained NaN/Inf or violated a hard invariant.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A configuration value is out of its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The simulation left the sane numeric envelope (|component| > 1e6).
    #[error("simulation diverged: {0}")]
    Diverged(String),

    /// Array/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Random trajectory generation exhausted its rejection budget.
    #[error("trajectory generation failed: {0}")]
    TrajGen(String),

    /// A time/index query outside the valid domain.
    #[error("query error: {0}")]
    Query(String),

    /// Checkpoint file is corrupt, truncated or has an unsupported version.
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
