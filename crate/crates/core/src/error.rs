//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data violates an invariant (shape, label range, emptiness, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Two operands have incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A text file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A numeric quantity that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or gradient and was aborted.
    #[error("training diverged at epoch {epoch} iteration {iter}: {detail}")]
    Diverged {
        epoch: usize,
        iter: usize,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
