use std::path::PathBuf;

use crate::numcore::NumError;

pub type Result<T, E = CsmnError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CsmnError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("feature file: {0}")]
    FeatureFormat(String),
    #[error("checkpoint: {0}")]
    CheckpointFormat(String),
    #[error("missing image feature for key {0:?}")]
    MissingFeature(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("token id {id} out of range for vocabulary of {len}")]
    TokenRange { id: usize, len: usize },
    #[error("memory: {0}")]
    Memory(String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("vocabulary hash mismatch: checkpoint {expected:016x}, data {found:016x}")]
    VocabMismatch { expected: u64, found: u64 },
    #[error("metric: {0}")]
    Metric(String),
}

impl CsmnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CsmnError::Io { path: path.into(), source }
    }
}
