//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/matrix extents do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A structurally invalid configuration (even kernel, zero stride, unknown model...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Invalid runtime input (bad label, missing channel, short signal...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Filter design constraint violated (edges vs Nyquist, inverted band...).
    #[error("filter design error: {0}")]
    Design(String),

    /// Numerical failure (rank deficiency, non-positive-definite matrix...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged or produced non-finite values.
    #[error("optimization error: {0}")]
    Optimization(String),

    /// Operation requires a fitted/loaded model that is absent.
    #[error("state error: {0}")]
    State(String),

    /// Malformed dataset/checkpoint bytes, located by offset.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 for user errors, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Input(_)
            | Error::Design(_)
            | Error::Dimension(_)
            | Error::Format { .. } => 1,
            Error::Numeric(_) | Error::Optimization(_) | Error::State(_) | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
