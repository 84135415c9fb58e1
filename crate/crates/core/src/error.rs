use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty distribution")]
    EmptyDistribution,

    #[error("insufficient samples for covariance: need at least 2, got {0}")]
    InsufficientSamples(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical overflow; increase reg")]
    NumericalOverflow,

    #[error("oracle requires uniform weights")]
    NonUniformWeights,

    #[error("eigensolver failed after {0} sweeps")]
    EigenFailed(usize),

    #[error("covariance is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("incompatible payload at item {index}: {reason}")]
    IncompatiblePayload { index: usize, reason: String },

    #[error(
        "insufficient class population: class {class} has {available} items, {required} required"
    )]
    ClassPopulation {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("parse error in {} at byte {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalOverflow | Error::EigenFailed(_) | Error::NotPositiveSemidefinite(_)
        )
    }
}
