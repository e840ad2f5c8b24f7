//! Shape manipulation: reshape, permute, concat, narrow, row gather/scatter.

use crate::element::Element;
use crate::tensor::{OpCtx, Tensor};

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn permute_raw<T: Element>(x: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let nd = shape.len();
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n: usize = shape.iter().product();
    let mut out = vec![T::ZERO; n];
    let mut idx = vec![0usize; nd]; // index in out coordinates
    for o in out.iter_mut() {
        let mut src = 0;
        for d in 0..nd {
            src += idx[d] * in_strides[axes[d]];
        }
        *o = x[src];
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, new_shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            new_shape.iter().product::<usize>(),
            self.len(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            new_shape
        );
        let old = self.shape().to_vec();
        let _ = &old;
        Tensor::op_output(
            "reshape",
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            move |ctx: &OpCtx<T>| {
                ctx.parents[0].accumulate_grad(ctx.grad_out);
            },
        )
    }

    /// Reorder axes; `axes` is a permutation of 0..ndim.
    pub fn permute(&self, axes: &[usize]) -> Tensor<T> {
        assert_eq!(axes.len(), self.ndim(), "permute axes length mismatch");
        let mut seen = vec![false; axes.len()];
        for &a in axes {
            assert!(a < axes.len() && !seen[a], "invalid permutation {axes:?}");
            seen[a] = true;
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let data = permute_raw(&self.data(), &shape, axes);
        let axes_own = axes.to_vec();
        Tensor::op_output("permute", out_shape.clone(), data, vec![self.clone()], move |ctx: &OpCtx<T>| {
            // Inverse permutation maps grad back to input layout.
            let mut inv = vec![0usize; axes_own.len()];
            for (d, &a) in axes_own.iter().enumerate() {
                inv[a] = d;
            }
            let g = permute_raw(ctx.grad_out, &out_shape, &inv);
            ctx.parents[0].accumulate_grad(&g);
        })
    }

    /// 2-D transpose.
    pub fn t2(&self) -> Tensor<T> {
        assert_eq!(self.ndim(), 2, "t2 requires a 2-D tensor");
        self.permute(&[1, 0])
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len(), "narrow axis out of range");
        assert!(start + len <= shape[axis], "narrow [{start}, {start}+{len}) exceeds axis size {}", shape[axis]);
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        drop(x);
        Tensor::op_output("narrow", out_shape, out, vec![self.clone()], move |ctx: &OpCtx<T>| {
            let mut buf = ctx.parents[0].grad_buf();
            for o in 0..outer {
                let base = (o * mid + start) * inner;
                let g = &ctx.grad_out[o * len * inner..(o + 1) * len * inner];
                for (b, &gv) in buf[base..base + len * inner].iter_mut().zip(g) {
                    *b += gv;
                }
            }
        })
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = parts[0].shape().to_vec();
        assert!(axis < first.len(), "concat axis out of range");
        for p in parts {
            assert_eq!(p.ndim(), first.len(), "concat rank mismatch");
            for d in 0..first.len() {
                if d != axis {
                    assert_eq!(p.shape()[d], first[d], "concat extent mismatch on axis {d}");
                }
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mids: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_mid: usize = mids.iter().sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total_mid;
        let mut out = Vec::with_capacity(outer * total_mid * inner);
        for o in 0..outer {
            for (p, &m) in parts.iter().zip(&mids) {
                let d = p.data();
                out.extend_from_slice(&d[o * m * inner..(o + 1) * m * inner]);
            }
        }
        let mids_own = mids.clone();
        Tensor::op_output("concat", out_shape, out, parts.to_vec(), move |ctx: &OpCtx<T>| {
            let mut offsets = Vec::with_capacity(mids_own.len());
            let mut acc = 0;
            for &m in &mids_own {
                offsets.push(acc);
                acc += m;
            }
            for (pi, parent) in ctx.parents.iter().enumerate() {
                let m = mids_own[pi];
                let mut buf = parent.grad_buf();
                for o in 0..outer {
                    let src = (o * acc + offsets[pi]) * inner;
                    let dst = o * m * inner;
                    for j in 0..m * inner {
                        buf[dst + j] += ctx.grad_out[src + j];
                    }
                }
            }
        })
    }

    /// Gather rows (axis 0): output row i = input row indices[i].
    pub fn select_rows(&self, indices: &[usize]) -> Tensor<T> {
        assert!(self.ndim() >= 1);
        let rows = self.shape()[0];
        let rest: usize = self.shape()[1..].iter().product();
        for &i in indices {
            assert!(i < rows, "select_rows index {i} out of range ({rows} rows)");
        }
        let x = self.data();
        let mut out = Vec::with_capacity(indices.len() * rest);
        for &i in indices {
            out.extend_from_slice(&x[i * rest..(i + 1) * rest]);
        }
        drop(x);
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = indices.len();
        let idx = indices.to_vec();
        Tensor::op_output("select_rows", out_shape, out, vec![self.clone()], move |ctx: &OpCtx<T>| {
            let mut buf = ctx.parents[0].grad_buf();
            for (r, &i) in idx.iter().enumerate() {
                let g = &ctx.grad_out[r * rest..(r + 1) * rest];
                for (b, &gv) in buf[i * rest..(i + 1) * rest].iter_mut().zip(g) {
                    *b += gv;
                }
            }
        })
    }

    /// Scatter rows into a zero tensor of `out_rows` rows:
    /// output[indices[i]] = input[i]. Indices must be unique.
    pub fn scatter_rows(&self, out_rows: usize, indices: &[usize]) -> Tensor<T> {
        assert_eq!(indices.len(), self.shape()[0], "scatter_rows needs one index per row");
        let rest: usize = self.shape()[1..].iter().product();
        let mut seen = vec![false; out_rows];
        for &i in indices {
            assert!(i < out_rows, "scatter_rows index {i} out of range");
            assert!(!seen[i], "scatter_rows duplicate index {i}");
            seen[i] = true;
        }
        let x = self.data();
        let mut out = vec![T::ZERO; out_rows * rest];
        for (r, &i) in indices.iter().enumerate() {
            out[i * rest..(i + 1) * rest].copy_from_slice(&x[r * rest..(r + 1) * rest]);
        }
        drop(x);
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = out_rows;
        let idx = indices.to_vec();
        Tensor::op_output("scatter_rows", out_shape, out, vec![self.clone()], move |ctx: &OpCtx<T>| {
            let mut g = Vec::with_capacity(idx.len() * rest);
            for &i in &idx {
                g.extend_from_slice(&ctx.grad_out[i * rest..(i + 1) * rest]);
            }
            ctx.parents[0].accumulate_grad(&g);
        })
    }

    /// Tile a (1, ...) tensor `count` times along axis 0.
    pub fn repeat_rows(&self, count: usize) -> Tensor<T> {
        assert_eq!(self.shape()[0], 1, "repeat_rows expects a single leading row");
        let rest: usize = self.shape()[1..].iter().product();
        let x = self.data();
        let mut out = Vec::with_capacity(count * rest);
        for _ in 0..count {
            out.extend_from_slice(&x);
        }
        drop(x);
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = count;
        Tensor::op_output("repeat_rows", out_shape, out, vec![self.clone()], move |ctx: &OpCtx<T>| {
            let mut g = vec![T::ZERO; rest];
            for r in 0..count {
                for (gi, &gv) in g.iter_mut().zip(&ctx.grad_out[r * rest..(r + 1) * rest]) {
                    *gi += gv;
                }
            }
            ctx.parents[0].accumulate_grad(&g);
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f64>::from_vec(&[2, 3, 4], (0..24).map(|v| v as f64).collect());
        let y = x.permute(&[2, 0, 1]);
        assert_eq!(y.shape(), &[4, 2, 3]);
        let z = y.permute(&[1, 2, 0]);
        assert_eq!(*z.data(), *x.data());
    }

    #[test]
    fn concat_then_narrow_restores() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]);
        let b = Tensor::<f64>::from_vec(&[2, 3], vec![5., 6., 7., 8., 9., 10.]);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1);
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(*c.narrow(1, 0, 2).data(), *a.data());
        assert_eq!(*c.narrow(1, 2, 3).data(), *b.data());
    }

    #[test]
    fn scatter_select_inverse() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let s = x.scatter_rows(5, &[3, 1]);
        assert_eq!(s.shape(), &[5, 3]);
        assert_eq!(*s.select_rows(&[3, 1]).data(), *x.data());
        assert_eq!(s.data()[0..3], [0., 0., 0.]);
    }
}
