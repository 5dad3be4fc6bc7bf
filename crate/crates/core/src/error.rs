use thiserror::Error;

use crate::autodiff::TapeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid path {path} for pair ({src}, {dst}): {reason}")]
    Path {
        path: usize,
        src: usize,
        dst: usize,
        reason: String,
    },

    #[error("invalid demand matrix: {0}")]
    Demand(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient history: need {needed} snapshots before t, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tape(#[from] TapeError),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
