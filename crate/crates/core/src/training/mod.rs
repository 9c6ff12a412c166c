//! Loss, optimizer, stochastic depth, and the training loop.

mod adam;
mod depth;
mod loss;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use depth::stochastic_depth_plan;
pub use loss::{mse_loss, mse_loss_graph, ClassWeights};
pub use trainer::{
    augment, first_sequence, format_loss_log, predict, train, LossRecord, Sampler, TrainConfig,
    TrainItem, TrainOutcome, DEFAULT_SEED,
};

use crate::bors::BorsError;
use crate::data::DataError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("video {id}: {reason}")]
    Video { id: String, reason: String },
    #[error(transparent)]
    Sampling(#[from] BorsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
