use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reduced coefficient vector has length {got}, expected K - 2 = {expected}")]
    GammaLength { got: usize, expected: usize },

    #[error("scheme is not symmetric (palindromic with trailing beta = 0)")]
    NotSymmetric,

    #[error("scheme is not consistent (coefficient sums differ from 1)")]
    NotConsistent,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite state after outer step {step}")]
    NonFiniteState { step: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix dimension {m} exceeds dense cap {cap}")]
    DenseCap { m: usize, cap: usize },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: truncated payload at byte offset {offset} (expected {expected} bytes)")]
    Truncated {
        path: PathBuf,
        offset: u64,
        expected: u64,
    },

    #[error("configuration mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
