mod conv;
mod dropout;
mod elementwise;
mod matmul;
mod norm;
mod reduce;
mod shape;

pub use elementwise::broadcast_shape;
pub use matmul::{matmul_raw, transpose_raw};
