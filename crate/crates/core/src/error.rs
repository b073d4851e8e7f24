use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("agent graph contains a cycle through agent {agent}")]
    CycleDetected { agent: usize },

    #[error("{what} index {index} out of range 1..={max}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("graph is not a simple path: {0}")]
    NotAPath(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("value outside its domain: {0}")]
    DomainError(String),

    #[error("parent agent {parent} of agent {agent} has no logit column yet")]
    MissingParent { agent: usize, parent: usize },

    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed dataset file {path}: {reason}")]
    MalformedDataset { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
