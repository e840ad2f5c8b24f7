//! 2-D convolution (im2col + matmul) and nearest-neighbor upsampling.
//! Input layout is (B, C, H, W); weights are (O, C, kh, kw).

use rayon::prelude::*;

use crate::element::Element;
use crate::ops::matmul::{matmul_raw, transpose_raw};
use crate::tensor::{OpCtx, Tensor};

pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= kernel, "conv kernel larger than padded input");
    (input + 2 * pad - kernel) / stride + 1
}

/// Expand one (C,H,W) image into columns of shape (C·kh·kw, OH·OW).
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    let mut cols = vec![T::ZERO; c * kh * kw * oh * ow];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = (ci * h + iy as usize) * w;
                    let dst = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            cols[dst + ox] = x[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Inverse of im2col: accumulate columns back into a (C,H,W) image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out: &mut [T],
) {
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = (ci * h + iy as usize) * w;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[dst + ix as usize] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// 2-D convolution with zero padding. Bias, when given, has shape (O).
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Tensor<T> {
        assert_eq!(self.ndim(), 4, "conv2d input must be (B,C,H,W), got {:?}", self.shape());
        assert_eq!(weight.ndim(), 4, "conv2d weight must be (O,C,kh,kw)");
        assert!(stride >= 1);
        let (b, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (o, c2, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        assert_eq!(c, c2, "conv2d channel mismatch: input {c}, weight {c2}");
        if let Some(bt) = bias {
            assert_eq!(bt.shape(), &[o], "conv2d bias must be (O)");
        }
        let oh = conv_out_extent(h, kh, stride, pad);
        let ow = conv_out_extent(w, kw, stride, pad);
        let ckk = c * kh * kw;

        let x_guard = self.data();
        let wt_guard = weight.data();
        let x: &[T] = &x_guard;
        let wt: &[T] = &wt_guard;
        let bvals: Option<Vec<T>> = bias.map(|bt| bt.to_vec());
        let mut out = vec![T::ZERO; b * o * oh * ow];
        out.par_chunks_mut(o * oh * ow).enumerate().for_each(|(bi, out_b)| {
            let cols = im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, kh, kw, stride, pad);
            let y = matmul_raw(wt, &cols, o, ckk, oh * ow);
            out_b.copy_from_slice(&y);
            if let Some(bv) = &bvals {
                for oi in 0..o {
                    let add = bv[oi];
                    for v in out_b[oi * oh * ow..(oi + 1) * oh * ow].iter_mut() {
                        *v += add;
                    }
                }
            }
        });
        drop(x_guard);
        drop(wt_guard);

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bt) = bias {
            parents.push(bt.clone());
        }
        Tensor::op_output("conv2d", vec![b, o, oh, ow], out, parents, move |ctx: &OpCtx<T>| {
            let x = ctx.parents[0].data();
            let wt = ctx.parents[1].data();
            let mut dx = vec![T::ZERO; b * c * h * w];
            let mut dw = vec![T::ZERO; o * ckk];
            let wt_t = transpose_raw(&wt, o, ckk);
            for bi in 0..b {
                let g = &ctx.grad_out[bi * o * oh * ow..(bi + 1) * o * oh * ow];
                let cols = im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, kh, kw, stride, pad);
                // dW += G · colsᵀ
                let cols_t = transpose_raw(&cols, ckk, oh * ow);
                let dw_b = matmul_raw(g, &cols_t, o, oh * ow, ckk);
                for (a, v) in dw.iter_mut().zip(&dw_b) {
                    *a += *v;
                }
                // dcols = Wᵀ · G, then fold back into the image.
                let dcols = matmul_raw(&wt_t, g, ckk, o, oh * ow);
                col2im(&dcols, c, h, w, kh, kw, stride, pad, &mut dx[bi * c * h * w..(bi + 1) * c * h * w]);
            }
            drop(x);
            drop(wt);
            ctx.parents[0].accumulate_grad(&dx);
            ctx.parents[1].accumulate_grad(&dw);
            if ctx.parents.len() == 3 {
                let mut db = vec![T::ZERO; o];
                for bi in 0..b {
                    for oi in 0..o {
                        let base = (bi * o + oi) * oh * ow;
                        for &gv in &ctx.grad_out[base..base + oh * ow] {
                            db[oi] += gv;
                        }
                    }
                }
                ctx.parents[2].accumulate_grad(&db);
            }
        })
    }

    /// Nearest-neighbor 2x spatial upsampling of a (B,C,H,W) tensor.
    pub fn upsample_nearest_2x(&self) -> Tensor<T> {
        assert_eq!(self.ndim(), 4, "upsample input must be (B,C,H,W)");
        let (b, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let x = self.data();
        let mut out = vec![T::ZERO; b * c * 4 * h * w];
        for bc in 0..b * c {
            let src = &x[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * 4 * h * w..(bc + 1) * 4 * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let v = src[y * w + xx];
                    let base = 2 * y * 2 * w + 2 * xx;
                    dst[base] = v;
                    dst[base + 1] = v;
                    dst[base + 2 * w] = v;
                    dst[base + 2 * w + 1] = v;
                }
            }
        }
        drop(x);
        Tensor::op_output(
            "upsample_nearest_2x",
            vec![b, c, 2 * h, 2 * w],
            out,
            vec![self.clone()],
            move |ctx: &OpCtx<T>| {
                let mut dx = vec![T::ZERO; b * c * h * w];
                for bc in 0..b * c {
                    let g = &ctx.grad_out[bc * 4 * h * w..(bc + 1) * 4 * h * w];
                    let dst = &mut dx[bc * h * w..(bc + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            let base = 2 * y * 2 * w + 2 * xx;
                            dst[y * w + xx] =
                                g[base] + g[base + 1] + g[base + 2 * w] + g[base + 2 * w + 1];
                        }
                    }
                }
                ctx.parents[0].accumulate_grad(&dx);
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 1 reproduces the input.
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let w = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![1.0]);
        let y = x.conv2d(&w, None, 1, 0);
        assert_eq!(*y.data(), *x.data());
    }

    #[test]
    fn conv_shapes_with_stride_and_pad() {
        let x = Tensor::<f64>::zeros(&[2, 3, 8, 10]);
        let w = Tensor::<f64>::zeros(&[5, 3, 3, 3]);
        let y = x.conv2d(&w, None, 2, 1);
        assert_eq!(y.shape(), &[2, 5, 4, 5]);
    }

    #[test]
    fn upsample_then_sum_preserves_total_times_4() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]);
        let y = x.upsample_nearest_2x();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let total: f64 = y.data().iter().sum();
        assert_eq!(total, 4.0 * 10.0);
    }
}
