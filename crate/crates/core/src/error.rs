//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A subdivision level outside the supported range was requested.
    #[error("level {level} out of range: {reason}")]
    LevelOutOfRange { level: usize, reason: String },

    /// Matrix or signal dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A sparse row that must carry at least one entry is empty.
    #[error("row {row} of {what} has empty support")]
    EmptyRowSupport { what: String, row: usize },

    /// Configuration that fails its own invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Malformed or truncated input data (files, datasets).
    #[error("bad data: {0}")]
    BadData(String),

    /// A nonfinite value surfaced where finite arithmetic is required.
    #[error("nonfinite value in {0}")]
    NonFinite(String),

    /// Training diverged at the given epoch.
    #[error("divergence at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    /// Checkpoint does not match the network configuration it is applied to.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
