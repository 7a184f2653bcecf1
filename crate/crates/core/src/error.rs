//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Geometry too degenerate for the requested operation
    /// (e.g. all source points coincident in registration).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Requested object category is not in the shape catalog.
    #[error("category not found: {0}")]
    CategoryNotFound(String),

    /// Task string has no lexicon entry for the given category.
    #[error("unknown task: {0:?} for category {1:?}")]
    UnknownTask(String, String),

    /// Operation invoked in a state it does not support
    /// (e.g. optimizer step before gradients exist).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Every candidate slot failed; selection has nothing to score.
    #[error("no usable candidate")]
    NoCandidate,

    /// A numeric computation produced a non-finite value.
    #[error("numeric failure at step {step}: {msg}")]
    NumericFailure { step: usize, msg: String },

    /// Object does not support the required queries (e.g. not watertight).
    #[error("unsupported object: {0}")]
    UnsupportedObject(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
