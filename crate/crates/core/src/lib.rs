//! Group reservoir transformer for chaotic time-series forecasting.
//!
//! A frozen ensemble of leaky echo state networks summarizes the full
//! history of a series; a small transformer encoder fuses that summary with
//! a cross-attention embedding of the recent window and predicts the next
//! `τ` steps.

pub mod chaos;
pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod embedding;
pub mod error;
pub mod group;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod reservoir;
pub mod rng;
pub mod stats;
pub mod tape;
pub mod train;

pub use data::{SeriesTensor, SplitSpec};
pub use error::{Error, Result};
pub use group::{GroupConfig, GroupReservoir};
pub use linalg::Matrix;
pub use model::{ForecastModel, ModelConfig};
pub use reservoir::{Activation, InitScheme, Reservoir, ReservoirConfig};
pub use rng::Rng;
pub use train::{train, TrainConfig};

