use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {}x{}, found {}x{}", expected.0, expected.1, found.0, found.1)]
    Dimension {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("a source set needs at least one image")]
    EmptySourceSet,
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("stain count mismatch: {spectra} spectra but {densities} density planes")]
    StainCount { spectra: usize, densities: usize },
    #[error("spectrum matrix is rank deficient: columns {columns:?} are linearly dependent")]
    Singular { columns: Vec<usize> },
    #[error("invalid parameter: {message}")]
    Parameter { message: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter { message: message.into() }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
