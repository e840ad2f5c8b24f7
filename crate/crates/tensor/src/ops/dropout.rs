//! Inverted dropout. Callers skip the op entirely in evaluation mode; the
//! mask comes from an explicit named RNG stream.

use rand::Rng;

use crate::element::Element;
use crate::rng::Stream;
use crate::tensor::{OpCtx, Tensor};

impl<T: Element> Tensor<T> {
    /// Zero each element with probability `rate` and scale survivors by
    /// 1/(1-rate).
    pub fn dropout(&self, rate: f64, stream: &mut Stream) -> Tensor<T> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1), got {rate}");
        if rate == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let mask: Vec<T> = (0..self.len())
            .map(|_| if stream.gen::<f64>() < keep { scale } else { T::ZERO })
            .collect();
        let data: Vec<T> = self.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        Tensor::op_output("dropout", self.shape().to_vec(), data, vec![self.clone()], move |ctx: &OpCtx<T>| {
            let dx: Vec<T> = ctx.grad_out.iter().zip(&mask).map(|(&g, &m)| g * m).collect();
            ctx.parents[0].accumulate_grad(&dx);
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngPool;

    #[test]
    fn dropout_zero_rate_is_identity() {
        let pool = RngPool::new(7);
        let x = Tensor::<f64>::from_vec(&[4], vec![1., 2., 3., 4.]);
        let y = x.dropout(0.0, &mut pool.stream("d"));
        assert_eq!(*y.data(), *x.data());
    }

    #[test]
    fn dropout_deterministic_per_stream() {
        let pool = RngPool::new(7);
        let x = Tensor::<f64>::from_vec(&[128], vec![1.0; 128]);
        let a = x.dropout(0.5, &mut pool.stream("d")).to_vec();
        let b = x.dropout(0.5, &mut pool.stream("d")).to_vec();
        assert_eq!(a, b);
        let c = x.dropout(0.5, &mut pool.stream("e")).to_vec();
        assert_ne!(a, c);
    }

    #[test]
    fn dropout_preserves_mean_roughly() {
        let pool = RngPool::new(3);
        let x = Tensor::<f64>::from_vec(&[20000], vec![1.0; 20000]);
        let y = x.dropout(0.3, &mut pool.stream("d"));
        let mean: f64 = y.data().iter().sum::<f64>() / 20000.0;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }
}
