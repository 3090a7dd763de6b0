//! Differentiable building blocks. Each block registers its parameters in a
//! [`ParamSet`](crate::params::ParamSet) under a dotted name prefix and
//! records its forward pass on a [`Graph`](crate::autograd::Graph).

pub mod bridge;
pub mod decoder;
pub mod encoder;
pub mod etb;
pub mod layers;
pub mod unet;

pub use bridge::GcnBridge;
pub use decoder::{DecoderStage, Head};
pub use encoder::{PatchAggregation, Stem};
pub use etb::{DeformConv, Etb, Mhsa};
pub use layers::{BatchNorm, Conv, LayerNorm, Upsample};
pub use unet::DoubleConv;
