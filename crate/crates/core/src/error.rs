//! Crate-wide error type.

/// Errors produced by dataset handling, training, and inference.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (bad magic, bad field, non-finite value).
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("training failed: {0}")]
    Train(String),

    #[error("eigensolver failed to converge within {0} iterations")]
    NoConvergence(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
