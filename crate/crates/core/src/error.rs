use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A simplex has (numerically) zero volume.
    #[error("simplex {simplex} is degenerate (|det A| = {det:e})")]
    DegenerateSimplex { simplex: usize, det: f64 },

    /// An objective term was evaluated outside its domain of definition.
    #[error("simplex {simplex}: {what}")]
    Domain { simplex: usize, what: String },

    /// Index out of bounds.
    #[error("{kind} index {index} out of range (len {len})")]
    Index {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    /// The optimizer reached an internally inconsistent state.
    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
