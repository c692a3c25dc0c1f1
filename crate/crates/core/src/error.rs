use thiserror::Error;

use crate::estimators::EstimatorError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("terrain error: {0}")]
    Terrain(String),
    #[error("no valid spawn for replica {replica} after {attempts} attempts")]
    SpawnBlocked { replica: usize, attempts: usize },
    #[error("invalid action: {0}")]
    Action(String),
    #[error("action {value} lies on or outside the squashing bounds")]
    Boundary { value: f64 },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("importance weight overflow at replica {replica}, step {step}")]
    WeightOverflow { replica: usize, step: usize },
    #[error("non-finite {what} at epoch {epoch}")]
    NumericAbort { what: String, epoch: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
