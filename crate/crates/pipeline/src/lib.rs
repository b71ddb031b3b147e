//! Training, chained inference and evaluation on top of the calibration
//! network.

pub mod calibrate;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod overlay;
pub mod predictor;
pub mod train;

use mvx_autograd::checkpoint::CheckpointError;
use mvx_autograd::GraphError;
use mvx_core::dataset::DatasetError;
use thiserror::Error;

pub use config::{PipelineConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    /// Non-finite loss, gradient or estimate.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A chained-inference stage produced no usable estimate.
    #[error("chain stage {stage}: {message}")]
    Chain { stage: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<mvx_model::network::InputError> for PipelineError {
    fn from(e: mvx_model::network::InputError) -> Self {
        Self::Data(e.to_string())
    }
}
