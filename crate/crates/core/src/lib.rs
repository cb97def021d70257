//! LSTM spiking neural networks: binary spike gates trained by
//! backpropagation through time with Gaussian surrogate derivatives.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod head;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod spike;

pub use error::{Error, Result};
pub use head::{Head, HeadKind};
pub use layer::{Gate, GradientSet, LayerParams, LayerState, StepCache};
pub use model::Network;
pub use numerics::{Matrix, RngStream, Vector};
pub use optim::{AdamConfig, AdamState, ParamTables};
pub use spike::SurrogateConfig;
