//! Reductions. Sums run in a fixed serial order so results do not depend on
//! thread count.

use crate::element::Element;
use crate::tensor::{OpCtx, Tensor};

impl<T: Element> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let mut s = T::ZERO;
        for &v in self.data().iter() {
            s += v;
        }
        let n = self.len();
        Tensor::op_output("sum", vec![1], vec![s], vec![self.clone()], move |ctx: &OpCtx<T>| {
            let g = ctx.grad_out[0];
            let mut buf = ctx.parents[0].grad_buf();
            for v in buf.iter_mut().take(n) {
                *v += g;
            }
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.len();
        assert!(n > 0, "mean of empty tensor");
        self.sum_all().scale(T::ONE / T::from_f64(n as f64))
    }

    /// Sum over one axis (the axis is removed from the shape).
    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        assert!(axis < self.ndim(), "sum_axis {} out of range for {:?}", axis, self.shape());
        let shape = self.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let x = self.data();
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(&x[base..base + inner]) {
                    *d += v;
                }
            }
        }
        drop(x);
        Tensor::op_output("sum_axis", out_shape, out, vec![self.clone()], move |ctx: &OpCtx<T>| {
            let mut buf = ctx.parents[0].grad_buf();
            for o in 0..outer {
                let g = &ctx.grad_out[o * inner..(o + 1) * inner];
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    for (b, &gv) in buf[base..base + inner].iter_mut().zip(g) {
                        *b += gv;
                    }
                }
            }
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor<T> {
        let n = self.shape()[axis];
        self.sum_axis(axis).scale(T::ONE / T::from_f64(n as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_axis_middle() {
        let x = Tensor::<f64>::from_vec(&[2, 3, 2], (0..12).map(|v| v as f64).collect());
        let y = x.sum_axis(1);
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(*y.data(), vec![6., 9., 24., 27.]);
    }

    #[test]
    fn mean_all_gradient() {
        let x = Tensor::<f64>::param(&[4], vec![1., 2., 3., 4.]);
        x.mean_all().backward();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }
}
