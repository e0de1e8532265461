//! Error type shared by every numerical routine in the crate.

use thiserror::Error;

/// Failure modes of the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A resolvent or closed form was evaluated at (or too close to) a pole.
    #[error("singularity: {0}")]
    Singularity(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("contour encloses no eigenvalue")]
    EmptyContour,

    /// The effective-dimension denominator of the random-feature MSE vanished.
    #[error("near phase transition: {0}")]
    NearPhaseTransition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate activation: {0}")]
    DegenerateActivation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("dataset is empty after filtering")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
