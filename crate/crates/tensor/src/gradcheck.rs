//! Finite-difference gradient checking.
//!
//! The oracle uses only forward evaluations (central differences), so it is
//! independent of the backward implementation it verifies. Checks run in
//! f64 with h = 1e-4.

use crate::rng::Stream;
use crate::tensor::{no_grad, Tensor};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

/// How input values are drawn.
#[derive(Clone, Copy, Debug)]
pub enum InputRange {
    /// Uniform in [-1, 1]; good default for unconstrained ops.
    Symmetric,
    /// Uniform in [lo, hi]; for ops with a restricted domain (ln, sqrt, div).
    Uniform(f64, f64),
}

impl InputRange {
    fn sample(&self, stream: &mut Stream) -> f64 {
        use rand::Rng;
        match self {
            InputRange::Symmetric => stream.gen::<f64>() * 2.0 - 1.0,
            InputRange::Uniform(lo, hi) => lo + (hi - lo) * stream.gen::<f64>(),
        }
    }
}

/// Compare the reverse-mode gradient of `f` against central finite
/// differences on random inputs of the given shapes. Returns the maximum
/// relative error over all input elements.
pub fn max_grad_error<F>(shapes: &[&[usize]], ranges: &[InputRange], f: F, stream: &mut Stream) -> f64
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    assert_eq!(shapes.len(), ranges.len());
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .zip(ranges)
        .map(|(shape, range)| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| range.sample(stream)).collect();
            Tensor::param(shape, data)
        })
        .collect();

    let loss = f(&inputs);
    assert_eq!(loss.len(), 1, "gradcheck target must be scalar");
    loss.backward();

    let mut max_err = 0.0f64;
    for input in &inputs {
        let analytic = input.grad().unwrap_or_else(|| vec![0.0; input.len()]);
        let base = input.to_vec();
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus[j] += FD_STEP;
            let mut minus = base.clone();
            minus[j] -= FD_STEP;

            let eval = |values: Vec<f64>| -> f64 {
                input.set_data(&values);
                let out = no_grad(|| f(&inputs));
                out.item()
            };
            let fp = eval(plus);
            let fm = eval(minus);
            input.set_data(&base);

            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let denom = analytic[j].abs().max(numeric.abs()).max(1e-6);
            let err = (analytic[j] - numeric).abs() / denom;
            max_err = max_err.max(err);
        }
    }
    max_err
}

/// Assert the gradient check passes at the standard tolerance.
pub fn assert_grads_close<F>(name: &str, shapes: &[&[usize]], ranges: &[InputRange], f: F, stream: &mut Stream)
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let err = max_grad_error(shapes, ranges, f, stream);
    assert!(
        err < FD_TOL,
        "gradient check failed for `{name}`: max relative error {err:.3e} >= {FD_TOL:.0e}"
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngPool;

    #[test]
    fn catches_wrong_gradient() {
        // d/dx of x*x is 2x; a deliberately broken loss x.detach()*x has
        // gradient x (half), which the checker must flag.
        let pool = RngPool::new(5);
        let err = max_grad_error(
            &[&[3]],
            &[InputRange::Symmetric],
            |xs| xs[0].detach().mul(&xs[0]).sum_all(),
            &mut pool.stream("gc"),
        );
        assert!(err > 0.1, "checker failed to flag a wrong gradient (err={err})");
    }

    #[test]
    fn passes_correct_gradient() {
        let pool = RngPool::new(5);
        assert_grads_close(
            "square_sum",
            &[&[4]],
            &[InputRange::Symmetric],
            |xs| xs[0].square().sum_all(),
            &mut pool.stream("gc"),
        );
    }
}
