use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("undefined result: {0}")]
    UndefinedResult(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("bridge error: {0}")]
    Bridge(String),

    #[error("bridge unreachable: {0}")]
    BridgeUnreachable(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
