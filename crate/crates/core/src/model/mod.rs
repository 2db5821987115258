//! The textural-spectral fusion transformer: feature extractors,
//! multi-head feature soft-attention, TSFF fusion, the multi-scale
//! backbone, and its checkpoint format.

pub mod attention;
pub mod checkpoint;
pub mod fe;
pub mod layers;
pub mod net;

pub use attention::{fcce, mhfsa, DescriptorSet, MeanMode, ScaleAttention, SoftmaxAxis};
pub use checkpoint::{load_checkpoint, load_checkpoint_bytes, save_checkpoint};
pub use fe::{FeatureExtractor, FeatureTaps};
pub use net::{ForwardPass, HyperTransformerNet, ModelConfig, UPSCALE};

use thiserror::Error;

use crate::image::PipelineError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint error at byte offset {offset}: {msg}")]
    Checkpoint { offset: u64, msg: String },
}
