//! Element-wise arithmetic and activations, with numpy-style right-aligned
//! broadcasting on the binary ops.

use crate::element::Element;
use crate::tensor::{OpCtx, Tensor};

/// Right-aligned broadcast shape of two operand shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "shapes {a:?} and {b:?} are not broadcast-compatible"
        );
        out[i] = da.max(db);
    }
    out
}

fn pad_left(shape: &[usize], nd: usize) -> Vec<usize> {
    let mut p = vec![1usize; nd];
    p[nd - shape.len()..].copy_from_slice(shape);
    p
}

/// Stride table aligned to the output shape, 0 on broadcast axes.
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let padded = pad_left(shape, nd);
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for d in (0..nd).rev() {
        if padded[d] == 1 {
            strides[d] = 0;
        } else {
            strides[d] = s;
        }
        s *= padded[d];
    }
    strides
}

enum BcastKind {
    Same,
    /// rhs is a suffix of lhs (e.g. (L,d) op (d,)): rhs index = i % rhs_len.
    SuffixRhs,
    SuffixLhs,
    General,
}

fn classify(a: &[usize], b: &[usize], out: &[usize]) -> BcastKind {
    if a == b {
        return BcastKind::Same;
    }
    let suffix = |small: &[usize], big: &[usize]| -> bool {
        small.len() <= big.len() && big[big.len() - small.len()..] == *small
    };
    if a == out && suffix(b, a) {
        return BcastKind::SuffixRhs;
    }
    if b == out && suffix(a, b) {
        return BcastKind::SuffixLhs;
    }
    BcastKind::General
}

/// Map every output index to (lhs index, rhs index) and apply `f`.
fn bcast_apply<T: Element, U>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> U,
) -> Vec<U> {
    let n: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(n);
    match classify(a_shape, b_shape, out_shape) {
        BcastKind::Same => out.extend(a.iter().zip(b).map(|(&x, &y)| f(x, y))),
        BcastKind::SuffixRhs => {
            let bl = b.len();
            for (i, &x) in a.iter().enumerate() {
                out.push(f(x, b[i % bl]));
            }
        }
        BcastKind::SuffixLhs => {
            let al = a.len();
            for (i, &y) in b.iter().enumerate() {
                out.push(f(a[i % al], y));
            }
        }
        BcastKind::General => {
            let sa = bcast_strides(a_shape, out_shape);
            let sb = bcast_strides(b_shape, out_shape);
            let nd = out_shape.len();
            let mut idx = vec![0usize; nd];
            for _ in 0..n {
                let (mut ia, mut ib) = (0, 0);
                for d in 0..nd {
                    ia += idx[d] * sa[d];
                    ib += idx[d] * sb[d];
                }
                out.push(f(a[ia], b[ib]));
                for d in (0..nd).rev() {
                    idx[d] += 1;
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
    }
    out
}

/// Sum `grad` (in out_shape) down to `target_shape`.
pub(crate) fn reduce_grad<T: Element>(
    grad: &[T],
    out_shape: &[usize],
    target_shape: &[usize],
) -> Vec<T> {
    if out_shape == target_shape {
        return grad.to_vec();
    }
    let tlen: usize = target_shape.iter().product();
    let mut out = vec![T::ZERO; tlen];
    if target_shape.len() <= out_shape.len()
        && out_shape[out_shape.len() - target_shape.len()..] == *target_shape
    {
        for (i, &g) in grad.iter().enumerate() {
            out[i % tlen] += g;
        }
        return out;
    }
    let st = bcast_strides(target_shape, out_shape);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    for &g in grad {
        let mut it = 0;
        for d in 0..nd {
            it += idx[d] * st[d];
        }
        out[it] += g;
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

fn binary<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
    // (grad_out, a_val, b_val, out_val) -> (da, db), evaluated element-wise
    df: impl Fn(T, T, T, T) -> (T, T) + 'static,
) -> Tensor<T> {
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let data = bcast_apply(&a.data(), a.shape(), &b.data(), b.shape(), &out_shape, f);
    let (ash, bsh, osh) = (a.shape().to_vec(), b.shape().to_vec(), out_shape.clone());
    Tensor::op_output(op, out_shape, data, vec![a.clone(), b.clone()], move |ctx: &OpCtx<T>| {
        let av = ctx.parents[0].data();
        let bv = ctx.parents[1].data();
        let n = ctx.grad_out.len();
        let mut da = vec![T::ZERO; n];
        let mut db = vec![T::ZERO; n];
        // Recompute operand pairing with the same index mapping as forward.
        let pairs: Vec<(T, T)> = bcast_apply(&av, &ash, &bv, &bsh, &osh, |x, y| (x, y));
        for i in 0..n {
            let (x, y) = pairs[i];
            let (gx, gy) = df(ctx.grad_out[i], x, y, ctx.out[i]);
            da[i] = gx;
            db[i] = gy;
        }
        ctx.parents[0].accumulate_grad(&reduce_grad(&da, &osh, &ash));
        ctx.parents[1].accumulate_grad(&reduce_grad(&db, &osh, &bsh));
    })
}

fn unary<T: Element>(
    op: &'static str,
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    // (grad_out, x_val, out_val) -> dx
    df: impl Fn(T, T, T) -> T + 'static,
) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::op_output(op, x.shape().to_vec(), data, vec![x.clone()], move |ctx: &OpCtx<T>| {
        let xv = ctx.parents[0].data();
        let dx: Vec<T> = ctx
            .grad_out
            .iter()
            .zip(xv.iter().zip(ctx.out))
            .map(|(&g, (&x, &y))| df(g, x, y))
            .collect();
        drop(xv);
        ctx.parents[0].accumulate_grad(&dx);
    })
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, o: &Tensor<T>) -> Tensor<T> {
        binary("add", self, o, |a, b| a + b, |g, _, _, _| (g, g))
    }

    pub fn sub(&self, o: &Tensor<T>) -> Tensor<T> {
        binary("sub", self, o, |a, b| a - b, |g, _, _, _| (g, -g))
    }

    pub fn mul(&self, o: &Tensor<T>) -> Tensor<T> {
        binary("mul", self, o, |a, b| a * b, |g, a, b, _| (g * b, g * a))
    }

    pub fn div(&self, o: &Tensor<T>) -> Tensor<T> {
        binary("div", self, o, |a, b| a / b, |g, a, b, _| (g / b, -g * a / (b * b)))
    }

    pub fn neg(&self) -> Tensor<T> {
        unary("neg", self, |x| -x, |g, _, _| -g)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        unary("scale", self, move |x| x * c, move |g, _, _| g * c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        unary("add_scalar", self, move |x| x + c, |g, _, _| g)
    }

    pub fn square(&self) -> Tensor<T> {
        unary("square", self, |x| x * x, |g, x, _| g * (x + x))
    }

    pub fn exp(&self) -> Tensor<T> {
        unary("exp", self, |x| x.exp(), |g, _, y| g * y)
    }

    pub fn ln(&self) -> Tensor<T> {
        unary("ln", self, |x| x.ln(), |g, x, _| g / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary("sqrt", self, |x| x.sqrt(), |g, _, y| g / (y + y))
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary("tanh", self, |x| x.tanh(), |g, _, y| g * (T::ONE - y * y))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            "sigmoid",
            self,
            |x| T::ONE / (T::ONE + (-x).exp()),
            |g, _, y| g * y * (T::ONE - y),
        )
    }

    pub fn silu(&self) -> Tensor<T> {
        unary(
            "silu",
            self,
            |x| x / (T::ONE + (-x).exp()),
            |g, x, _| {
                let s = T::ONE / (T::ONE + (-x).exp());
                g * s * (T::ONE + x * (T::ONE - s))
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        unary(
            "gelu",
            self,
            move |x| {
                let u = c * (x + k * x * x * x);
                half * x * (T::ONE + u.tanh())
            },
            move |g, x, _| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                let du = c * (T::ONE + T::from_f64(3.0) * k * x * x);
                g * (half * (T::ONE + t) + half * x * (T::ONE - t * t) * du)
            },
        )
    }

    /// Clamp values to [lo, hi]; gradient passes only inside the range.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        unary(
            "clamp",
            self,
            move |x| x.maxv(lo).minv(hi),
            move |g, x, _| if x > lo && x < hi { g } else { T::ZERO },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_bias_add() {
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::<f64>::from_vec(&[3], vec![10., 20., 30.]);
        let y = a.add(&b);
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(*y.data(), vec![11., 22., 33., 14., 25., 36.]);
    }

    #[test]
    fn broadcast_grad_reduces() {
        let b = Tensor::<f64>::param(&[3], vec![1., 2., 3.]);
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1.; 6]);
        a.mul(&b).sum_all().backward();
        assert_eq!(b.grad().unwrap(), vec![2., 2., 2.]);
    }

    #[test]
    fn scalar_broadcast() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]);
        let s = Tensor::<f64>::scalar(2.0);
        let y = a.mul(&s);
        assert_eq!(*y.data(), vec![2., 4., 6., 8.]);
    }

    #[test]
    fn general_broadcast_middle_axis() {
        let a = Tensor::<f64>::from_vec(&[2, 1, 2], vec![1., 2., 3., 4.]);
        let b = Tensor::<f64>::from_vec(&[1, 3, 1], vec![1., 10., 100.]);
        let y = a.mul(&b);
        assert_eq!(y.shape(), &[2, 3, 2]);
        assert_eq!(
            *y.data(),
            vec![1., 2., 10., 20., 100., 200., 3., 4., 30., 40., 300., 400.]
        );
    }
}
