use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("argument error: {0}")]
    Argument(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("noise predictor violated its contract: {0}")]
    ModelContract(String),

    #[error("model health check failed: {0}")]
    ModelHealth(String),

    #[error("training health check failed: {0}")]
    TrainingHealth(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {}: {message}", path.display())]
    Persistence { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Persistence {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
