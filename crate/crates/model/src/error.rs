use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Core(#[from] stainsep_core::Error),
    #[error("input size {height}x{width} unsupported: both sides must be positive multiples of {multiple}")]
    UnsupportedSize {
        height: usize,
        width: usize,
        multiple: usize,
    },
    #[error("non-finite {what} loss at iteration {iteration} (batch: {})", batch.join(", "))]
    NonFinite {
        what: &'static str,
        iteration: usize,
        batch: Vec<String>,
    },
    #[error("checkpoint does not match the run configuration: {0}")]
    ConfigMismatch(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
