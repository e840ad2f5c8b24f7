//! Layer normalization and softmax over the last axis.

use crate::element::Element;
use crate::tensor::{OpCtx, Tensor};

impl<T: Element> Tensor<T> {
    /// Normalize the last axis to zero mean / unit variance (no affine).
    /// A constant row maps to zeros thanks to the epsilon.
    pub fn layer_norm(&self, eps: f64) -> Tensor<T> {
        let d = *self.shape().last().expect("layer_norm on 0-d tensor");
        assert!(d > 0);
        let rows = self.len() / d;
        let x = self.data();
        let mut out = vec![T::ZERO; self.len()];
        let mut inv_std = vec![T::ZERO; rows];
        let inv_d = T::ONE / T::from_f64(d as f64);
        let epsv = T::from_f64(eps);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let istd = T::ONE / (var + epsv).sqrt();
            inv_std[r] = istd;
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * istd;
            }
        }
        drop(x);
        Tensor::op_output("layer_norm", self.shape().to_vec(), out, vec![self.clone()], move |ctx: &OpCtx<T>| {
            let mut dx = vec![T::ZERO; ctx.grad_out.len()];
            for r in 0..rows {
                let g = &ctx.grad_out[r * d..(r + 1) * d];
                let y = &ctx.out[r * d..(r + 1) * d];
                let mut g_mean = T::ZERO;
                let mut gy_mean = T::ZERO;
                for (gv, yv) in g.iter().zip(y) {
                    g_mean += *gv;
                    gy_mean += *gv * *yv;
                }
                g_mean *= inv_d;
                gy_mean *= inv_d;
                let istd = inv_std[r];
                for ((o, &gv), &yv) in dx[r * d..(r + 1) * d].iter_mut().zip(g).zip(y) {
                    *o = istd * (gv - g_mean - yv * gy_mean);
                }
            }
            ctx.parents[0].accumulate_grad(&dx);
        })
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&self) -> Tensor<T> {
        let d = *self.shape().last().expect("softmax on 0-d tensor");
        let rows = self.len() / d;
        let x = self.data();
        let mut out = vec![T::ZERO; self.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mx = row[0];
            for &v in row {
                mx = mx.maxv(v);
            }
            let mut sum = T::ZERO;
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mx).exp();
                sum += *o;
            }
            let inv = T::ONE / sum;
            for o in out[r * d..(r + 1) * d].iter_mut() {
                *o *= inv;
            }
        }
        drop(x);
        Tensor::op_output("softmax", self.shape().to_vec(), out, vec![self.clone()], move |ctx: &OpCtx<T>| {
            let mut dx = vec![T::ZERO; ctx.grad_out.len()];
            for r in 0..rows {
                let g = &ctx.grad_out[r * d..(r + 1) * d];
                let y = &ctx.out[r * d..(r + 1) * d];
                let mut dot = T::ZERO;
                for (gv, yv) in g.iter().zip(y) {
                    dot += *gv * *yv;
                }
                for ((o, &gv), &yv) in dx[r * d..(r + 1) * d].iter_mut().zip(g).zip(y) {
                    *o = yv * (gv - dot);
                }
            }
            ctx.parents[0].accumulate_grad(&dx);
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layernorm_constant_row_is_zero() {
        let x = Tensor::<f64>::from_vec(&[1, 4], vec![3.0; 4]);
        let y = x.layer_norm(1e-5);
        for &v in y.data().iter() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn softmax_uniform() {
        let x = Tensor::<f64>::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]);
        let y = x.softmax();
        for &v in y.data().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., -1., 0., 7.]);
        let y = x.softmax();
        for r in 0..2 {
            let s: f64 = y.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
