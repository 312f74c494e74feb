use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by problem construction, surrogates, the solver and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("ill-conditioned linear system: {0}")]
    IllConditioned(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{failed} of {total} points failed (budget {budget_percent}%)")]
    TooManyFailures {
        failed: usize,
        total: usize,
        budget_percent: usize,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
