//! Dense matrix multiplication. The kernel streams rows of B against a hot
//! output row (i-p-j order), which auto-vectorizes and keeps a fixed
//! per-element reduction order, so results are bit-identical for any
//! thread count.

use rayon::prelude::*;

use crate::element::Element;
use crate::tensor::{OpCtx, Tensor};

/// C (m,n) = A (m,k) · B (k,n), row-major.
pub fn matmul_raw<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::ZERO; m * n];
    let chunk = rows_per_chunk(m, k * n);
    c.par_chunks_mut(chunk * n).enumerate().for_each(|(ci, c_block)| {
        let i0 = ci * chunk;
        for (bi, c_row) in c_block.chunks_mut(n).enumerate() {
            let i = i0 + bi;
            let a_row = &a[i * k..(i + 1) * k];
            for (p, &av) in a_row.iter().enumerate() {
                let b_row = &b[p * n..(p + 1) * n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv = av.mul_add(bv, *cv);
                }
            }
        }
    });
    c
}

fn rows_per_chunk(m: usize, work_per_row: usize) -> usize {
    // Keep parallel chunks coarse; tiny matmuls stay single-chunk.
    let min_work = 1 << 16;
    if work_per_row == 0 {
        return m.max(1);
    }
    (min_work / work_per_row).clamp(1, m.max(1))
}

pub fn transpose_raw<T: Element>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

impl<T: Element> Tensor<T> {
    /// 2-D matrix product.
    pub fn matmul(&self, o: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.ndim(), 2, "matmul lhs must be 2-D, got {:?}", self.shape());
        assert_eq!(o.ndim(), 2, "matmul rhs must be 2-D, got {:?}", o.shape());
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (o.shape()[0], o.shape()[1]);
        assert_eq!(k, k2, "matmul inner dims differ: {:?} x {:?}", self.shape(), o.shape());
        let data = matmul_raw(&self.data(), &o.data(), m, k, n);
        Tensor::op_output("matmul", vec![m, n], data, vec![self.clone(), o.clone()], move |ctx: &OpCtx<T>| {
            let a = ctx.parents[0].data();
            let b = ctx.parents[1].data();
            // dA = G·Bᵀ, dB = Aᵀ·G
            let bt = transpose_raw(&b, k, n);
            let da = matmul_raw(ctx.grad_out, &bt, m, n, k);
            let at = transpose_raw(&a, m, k);
            let db = matmul_raw(&at, ctx.grad_out, k, m, n);
            drop(a);
            drop(b);
            ctx.parents[0].accumulate_grad(&da);
            ctx.parents[1].accumulate_grad(&db);
        })
    }

    /// Batched matrix product: (B,M,K)·(B,K,N) -> (B,M,N).
    pub fn bmm(&self, o: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.ndim(), 3, "bmm lhs must be 3-D, got {:?}", self.shape());
        assert_eq!(o.ndim(), 3, "bmm rhs must be 3-D, got {:?}", o.shape());
        let (bs, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (bs2, k2, n) = (o.shape()[0], o.shape()[1], o.shape()[2]);
        assert_eq!(bs, bs2, "bmm batch dims differ");
        assert_eq!(k, k2, "bmm inner dims differ: {:?} x {:?}", self.shape(), o.shape());
        let a_guard = self.data();
        let b_guard = o.data();
        let a: &[T] = &a_guard;
        let b: &[T] = &b_guard;
        let mut data = vec![T::ZERO; bs * m * n];
        data.par_chunks_mut(m * n).enumerate().for_each(|(i, out)| {
            out.copy_from_slice(&matmul_raw(
                &a[i * m * k..(i + 1) * m * k],
                &b[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        });
        drop(a_guard);
        drop(b_guard);
        Tensor::op_output("bmm", vec![bs, m, n], data, vec![self.clone(), o.clone()], move |ctx: &OpCtx<T>| {
            let a = ctx.parents[0].data();
            let b = ctx.parents[1].data();
            let mut da = vec![T::ZERO; bs * m * k];
            let mut db = vec![T::ZERO; bs * k * n];
            for i in 0..bs {
                let g = &ctx.grad_out[i * m * n..(i + 1) * m * n];
                let ai = &a[i * m * k..(i + 1) * m * k];
                let bi = &b[i * k * n..(i + 1) * k * n];
                let bt = transpose_raw(bi, k, n);
                da[i * m * k..(i + 1) * m * k].copy_from_slice(&matmul_raw(g, &bt, m, n, k));
                let at = transpose_raw(ai, m, k);
                db[i * k * n..(i + 1) * k * n].copy_from_slice(&matmul_raw(&at, g, k, m, n));
            }
            drop(a);
            drop(b);
            ctx.parents[0].accumulate_grad(&da);
            ctx.parents[1].accumulate_grad(&db);
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shape_2x3_3x4() {
        let a = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(|v| v as f64).collect());
        let b = Tensor::<f64>::from_vec(&[3, 4], (0..12).map(|v| v as f64).collect());
        let c = a.matmul(&b);
        assert_eq!(c.shape(), &[2, 4]);
        // row 0 = [0,1,2]·B = [20, 23, 26, 29]
        assert_eq!(c.data()[..4], [20., 23., 26., 29.]);
    }

    #[test]
    #[should_panic(expected = "inner dims differ")]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let _ = a.matmul(&b);
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let a = Tensor::<f64>::from_vec(&[2, 2, 3], (0..12).map(|v| v as f64 * 0.5).collect());
        let b = Tensor::<f64>::from_vec(&[2, 3, 2], (0..12).map(|v| v as f64 * 0.25).collect());
        let c = a.bmm(&b);
        for i in 0..2 {
            let ai = Tensor::<f64>::from_vec(&[2, 3], a.data()[i * 6..(i + 1) * 6].to_vec());
            let bi = Tensor::<f64>::from_vec(&[3, 2], b.data()[i * 6..(i + 1) * 6].to_vec());
            let ci = ai.matmul(&bi);
            assert_eq!(c.data()[i * 4..(i + 1) * 4], ci.data()[..]);
        }
    }
}
