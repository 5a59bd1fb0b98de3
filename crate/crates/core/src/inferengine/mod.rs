//! Forward-only execution of expanded architectures.
//!
//! Tensors hold `f32` data; reductions accumulate in `f64`. Per-sample activations are
//! channel-major `[channels, time]`.

mod container;
mod graph;
pub mod ops;
mod tensor;
mod weights;

pub use container::{read_container, write_container, Container, Entry, Values};
pub use graph::{forward_sample, run_graph};
pub use tensor::Tensor;
pub use weights::{init_weights, load_weights, save_weights, tensor_specs, Init, TensorSpec, WeightsBundle};

use thiserror::Error;

use crate::archsynth::ArchError;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weights do not match the architecture: {0}")]
    WeightsMismatch(String),
    #[error("layer {0} produced non-finite values")]
    NonFinite(String),
    #[error("malformed container: {0}")]
    Container(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, InferError>;
