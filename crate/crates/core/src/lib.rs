//! Tiled DDIM inversion and noise-damped guidance for editing images beyond
//! a denoiser's training resolution.

pub mod codec;
pub mod container;
pub mod error;
pub mod estimators;
pub mod guidance;
pub mod inversion;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod tiling;

pub use error::{Error, Result};
pub use tensor::LatentTensor;
