//! Two-stage probabilistic forecasting over gridded multi-channel fields:
//! a continuous convolutional VAE (stage one) and a masked generative
//! transformer with a per-token diffusion head (stage two), plus iterative
//! parallel decoding, ensemble generation, and a verification metric
//! suite, exercised end-to-end on a built-in synthetic dataset.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sampler;
pub mod tokenizer;
pub mod training;
pub mod vae;

pub use error::{Error, Result};
