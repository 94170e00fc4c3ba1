//! From-scratch deformable residual network for single-channel target
//! segmentation: tensors, convolution with full backpropagation, bilinear
//! sampling with learned offsets, residual blocks, Adam training, synthetic
//! speckled data, and pixel-accuracy evaluation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod deform;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pgm;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SplitMix64;
pub use scalar::Real;
pub use tensor::{PlaneView, Tensor4};
