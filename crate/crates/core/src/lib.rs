//! Hybrid transformer/graph U-shaped segmentation networks with a
//! two-stage region-of-interest pipeline, written from scratch on a small
//! tape-based autodiff engine.

pub mod autograd;
pub mod blocks;
pub mod data;
pub mod error;
pub mod kernels;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Arch, Model, ModelConfig};
pub use tensor::{Real, Tensor};
