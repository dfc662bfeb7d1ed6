//! Learned stain separation: one generator per stain, coupled through a
//! discriminator that judges the re-synthesized mixture.

pub mod checkpoint;
pub mod error;
pub mod losses;
pub mod model;
pub mod networks;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use candle_core::DType;
pub use error::{ModelError, Result};
pub use model::StainSeparator;
pub use trainer::{train, Batch, PhaseSchedule, SampleSource, TrainOptions, TrainOutcome};
