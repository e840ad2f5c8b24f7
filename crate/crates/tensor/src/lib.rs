//! Dense n-dimensional array arithmetic with reverse-mode automatic
//! differentiation, the AdamW optimizer and warmup/cosine schedule, named
//! deterministic RNG streams, 2-D FFTs, and the OCTF tensor file format.

mod element;
pub mod fft;
pub mod gradcheck;
pub mod octf;
mod ops;
pub mod optim;
pub mod rng;
mod tensor;

pub use element::{Dtype, Element};
pub use ops::{broadcast_shape, matmul_raw, transpose_raw};
pub use tensor::{grad_enabled, no_grad, Tensor};

use rand::Rng;

/// One standard-normal draw via Box-Muller. Consumes exactly two uniforms
/// per call, so sequences are reproducible for a fixed stream.
pub fn rng_normal(stream: &mut rng::Stream) -> f64 {
    let u1 = 1.0 - stream.gen::<f64>(); // (0, 1]
    let u2: f64 = stream.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
