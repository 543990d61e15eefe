//! Minimal tensor and layer toolkit for the generator/discriminator pair.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod nets;
pub mod tensor;

pub use adam::AdamState;
pub use layers::{Layer, Mode, Param};
pub use loss::{l1_loss, lsgan_loss, LossGrad};
pub use nets::{DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet, Network};
pub use tensor::Tensor4;

/// `[0, 255]` image value to the `[-1, 1]` network range.
#[inline]
pub fn to_unit(x: f32) -> f32 {
    x / 127.5 - 1.0
}

/// Inverse of [`to_unit`].
#[inline]
pub fn from_unit(y: f32) -> f32 {
    (y + 1.0) * 127.5
}
