//! The class-attention video transformer.
//!
//! A clip is cut into 3D patches and linearly embedded, refined by self-attention blocks
//! over the patch rows, pooled into a class embedding by class-attention blocks, and mapped
//! to an engagement intensity in `[0, 1]` by a linear head. Every residual branch is scaled
//! by a learnable per-channel diagonal.

mod checkpoint;
mod config;
mod layers;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{CavtConfig, HeadActivation, CONFIG_KEYS};
pub use layers::{
    attention, ca_block, forward, forward_patches, infer, mlp, patchify, sa_block, unpatchify,
    DepthPlan, ForwardTrace,
};
pub use params::{
    count_params, AttentionIndex, BlockIndex, CavtParams, MlpIndex, ParamLayout, ParamSpec,
    INIT_STD,
};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("in {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: NumericsError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
