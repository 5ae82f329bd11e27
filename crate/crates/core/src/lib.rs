//! Crack segmentation with scale-space attention, feature enhancement and
//! deeply supervised fusion.

pub mod checkpoint;
pub mod config;
pub mod datapipe;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod prior;
pub mod synth;
pub mod trainer;

pub use candle_core::Device;
pub use config::RunConfig;
pub use error::{Error, ErrorKind, Result};
pub use model::{Mode, Model, ModelConfig};
