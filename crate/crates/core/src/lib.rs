//! Latent-guided diffusion at desk scale.
//!
//! A class-conditional toy DDPM is trained on procedurally generated shapes.
//! A small per-pixel MLP, the latent guidance predictor, learns to read spatial
//! maps (edges, saliency, soft labels) out of the denoiser's intermediate
//! activations. During reverse diffusion the gradient of the map loss with
//! respect to the noisy sample steers generation toward a target map.

pub mod denoiser;
pub mod error;
pub mod harness;
pub mod maps;
pub mod predictor;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
