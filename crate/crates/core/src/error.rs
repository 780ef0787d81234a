use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: {0}")]
    Size(String),

    #[error("axis {axis} out of range for a {ndim}-way tensor")]
    Axis { axis: usize, ndim: usize },

    #[error("rank chain mismatch: {0}")]
    RankChain(String),

    #[error("no rank >= 1 reaches compression {target} (rank 1 gives {best:.3})")]
    InfeasibleTarget { target: f64, best: f64 },

    #[error("unknown tape node {0}")]
    UnknownNode(usize),

    #[error("unknown parameter {0}")]
    UnknownParam(usize),

    #[error("invalid operation on tape: {0}")]
    Tape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn size(msg: impl Into<String>) -> Self {
        Error::Size(msg.into())
    }
}
