//! Tuberculosis chest X-ray classification with SqueezeNet and ResNet-50,
//! built on a small reverse-mode tensor engine.
//!
//! - [`tensor`]: dense tensors, the tape, and every differentiable op the two
//!   networks need (convolution via patch-matrix GEMM, pooling, batch norm,
//!   dense, softmax cross-entropy).
//! - [`nn`]: parameter storage, fire modules, bottleneck blocks and the two
//!   model builders at 64×64×3 input with two classes.
//! - [`data`]: dataset scanning, balanced splits, image loading and the
//!   randomized affine augmentation.
//! - [`train`]: optimizers, the training loop, metrics and checkpoints.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, Var};
