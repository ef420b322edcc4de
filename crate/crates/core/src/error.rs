use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// The label axis that lacks enough distinct classes for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassAxis {
    Speaker,
    Phrase,
    /// Repeated sessions within one (speaker, phrase) cell.
    Sessions,
}

impl fmt::Display for ClassAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassAxis::Speaker => write!(f, "speaker"),
            ClassAxis::Phrase => write!(f, "phrase"),
            ClassAxis::Sessions => write!(f, "sessions per class"),
        }
    }
}

/// Broad failure category, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("insufficient classes along the {axis} axis: found {found}, need at least {required}")]
    InsufficientClasses {
        axis: ClassAxis,
        found: usize,
        required: usize,
    },

    #[error("non-finite feature value in vector {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid hypothesis priors: {0}")]
    InvalidPriors(String),

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("{what} of {found} exceeds the limit of {limit}")]
    SizeLimit {
        what: &'static str,
        found: usize,
        limit: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(&'static str),

    #[error("session {0:?} is used both for enrollment and as a test vector")]
    SessionLeakage(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("rank deficient data: achievable rank is {rank}, requested {requested}")]
    RankDeficient { rank: usize, requested: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io(_) => ErrorCategory::Io,
            Error::NotPositiveDefinite { .. } | Error::RankDeficient { .. } => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
