//! Prediction heads: the per-token diffusion head (denoising MLP with
//! AdaLN conditioning) and the auxiliary deterministic MLP head with
//! exponential frame weighting.

pub mod deterministic;
pub mod diffusion;
pub mod schedule;

pub use deterministic::{deter_loss, DeterministicHead, FrameWeights};
pub use diffusion::{diffusion_loss, sinusoidal_embedding, DiffusionHead, DiffusionHeadConfig};
pub use schedule::{forward_diffuse_with_alpha_bar, NoiseSchedule, NoiseScheduleConfig, RespacedSchedule};
