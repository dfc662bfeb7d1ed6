//! Blind stain separation toolkit: shared domain types, the linear
//! fluorescence mixing model, dataset preparation, a non-negative matrix
//! factorization baseline and image quality metrics.

pub mod config;
pub mod data;
pub mod error;
#[cfg(feature = "io")]
pub mod io;
pub mod losses;
pub mod metrics;
pub mod mixing;
pub mod nmf;
pub mod types;

pub use config::{CouplingMode, NetworkConfig, TrainConfig};
pub use error::{Error, Result};
pub use losses::{AdversarialForm, LossReport, Phase};
pub use types::{validate_sample, DensityMaps, Image, Sample, SampleKind, ScoreMap, SourceSet, SpectrumMatrix, Violation};
