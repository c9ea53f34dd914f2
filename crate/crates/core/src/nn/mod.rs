//! Minimal CPU training engine: channel-major tensors, hand-written
//! backward passes and Adam.

mod act;
mod adam;
mod conv;
mod gemm;
mod norm;
mod param;
mod tensor;
mod upsample;

pub use act::{sigmoid, LeakyRelu, Tanh};
pub use adam::{Adam, AdamConfig, Moments};
pub use conv::{Conv2d, ConvTranspose2d};
pub use norm::BatchNorm2d;
pub use param::{Init, Module, Param};
pub(crate) use param::join;
pub use tensor::Tensor;
pub use upsample::Bilinear;
