//! Finite-difference gradient checks for every differentiable op.
//!
//! Central differences (h = 1e-4) in f64 are the independent oracle: they
//! use only forward evaluations. Each op is checked on many random shapes;
//! the full 20-shape sweep per op lives in the acceptance suite.

use omnicast_tensor::gradcheck::{assert_grads_close, InputRange};
use omnicast_tensor::rng::{RngPool, Stream};
use omnicast_tensor::Tensor;
use rand::Rng;

const SYM: InputRange = InputRange::Symmetric;
const POS: InputRange = InputRange::Uniform(0.3, 1.8);

fn rand_dims(stream: &mut Stream, n: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..n).map(|_| stream.gen_range(lo..=hi)).collect()
}

/// Reduce an arbitrary-shaped output to a scalar through fixed random
/// weights so every output element influences the loss.
fn weighted_sum(y: &Tensor<f64>, stream: &mut Stream) -> Tensor<f64> {
    let w = Tensor::rand_uniform(y.shape(), 0.5, 1.5, stream);
    y.mul(&w).sum_all()
}

macro_rules! check_binary {
    ($name:ident, $call:expr, $range:expr, $shapes:expr) => {
        #[test]
        fn $name() {
            let pool = RngPool::new(0xC0FFEE);
            let mut stream = pool.stream(stringify!($name));
            for rep in 0..6 {
                let shape = $shapes(&mut stream, rep);
                let mut wstream = pool.substream(stringify!($name), rep);
                let w = Tensor::rand_uniform(&shape.2, 0.5, 1.5, &mut wstream);
                assert_grads_close(
                    stringify!($name),
                    &[&shape.0, &shape.1],
                    &[$range, $range],
                    |xs| {
                        let y: Tensor<f64> = $call(&xs[0], &xs[1]);
                        y.mul(&w).sum_all()
                    },
                    &mut stream,
                );
            }
        }
    };
}

fn same_shapes(stream: &mut Stream, _rep: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let s = rand_dims(stream, 2, 1, 4);
    (s.clone(), s.clone(), s)
}

fn bcast_shapes(stream: &mut Stream, rep: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let d = stream.gen_range(1..=4usize);
    let l = stream.gen_range(1..=4usize);
    match rep % 3 {
        0 => (vec![l, d], vec![d], vec![l, d]),            // suffix rhs
        1 => (vec![d], vec![l, d], vec![l, d]),            // suffix lhs
        _ => (vec![l, 1, d], vec![1, 3, d], vec![l, 3, d]), // general middle axis
    }
}

check_binary!(gc_add, |a: &Tensor<f64>, b: &Tensor<f64>| a.add(b), SYM, same_shapes);
check_binary!(gc_sub, |a: &Tensor<f64>, b: &Tensor<f64>| a.sub(b), SYM, same_shapes);
check_binary!(gc_mul, |a: &Tensor<f64>, b: &Tensor<f64>| a.mul(b), SYM, same_shapes);
check_binary!(gc_div, |a: &Tensor<f64>, b: &Tensor<f64>| a.div(b), POS, same_shapes);
check_binary!(gc_add_bcast, |a: &Tensor<f64>, b: &Tensor<f64>| a.add(b), SYM, bcast_shapes);
check_binary!(gc_mul_bcast, |a: &Tensor<f64>, b: &Tensor<f64>| a.mul(b), SYM, bcast_shapes);
check_binary!(gc_div_bcast, |a: &Tensor<f64>, b: &Tensor<f64>| a.div(b), POS, bcast_shapes);

macro_rules! check_unary {
    ($name:ident, $call:expr, $range:expr) => {
        #[test]
        fn $name() {
            let pool = RngPool::new(0xBEEF);
            let mut stream = pool.stream(stringify!($name));
            for rep in 0..6 {
                let shape = rand_dims(&mut stream, 1 + rep % 3, 1, 4);
                let mut wstream = pool.substream(stringify!($name), rep);
                let w = Tensor::rand_uniform(&shape, 0.5, 1.5, &mut wstream);
                assert_grads_close(
                    stringify!($name),
                    &[&shape],
                    &[$range],
                    |xs| {
                        let y: Tensor<f64> = $call(&xs[0]);
                        y.mul(&w).sum_all()
                    },
                    &mut stream,
                );
            }
        }
    };
}

check_unary!(gc_neg, |x: &Tensor<f64>| x.neg(), SYM);
check_unary!(gc_scale, |x: &Tensor<f64>| x.scale(1.7), SYM);
check_unary!(gc_add_scalar, |x: &Tensor<f64>| x.add_scalar(0.3), SYM);
check_unary!(gc_square, |x: &Tensor<f64>| x.square(), SYM);
check_unary!(gc_exp, |x: &Tensor<f64>| x.exp(), SYM);
check_unary!(gc_ln, |x: &Tensor<f64>| x.ln(), POS);
check_unary!(gc_sqrt, |x: &Tensor<f64>| x.sqrt(), POS);
check_unary!(gc_tanh, |x: &Tensor<f64>| x.tanh(), SYM);
check_unary!(gc_sigmoid, |x: &Tensor<f64>| x.sigmoid(), SYM);
check_unary!(gc_silu, |x: &Tensor<f64>| x.silu(), SYM);
check_unary!(gc_gelu, |x: &Tensor<f64>| x.gelu(), SYM);
check_unary!(gc_clamp, |x: &Tensor<f64>| x.clamp(-0.5, 0.5), SYM);
check_unary!(gc_softmax, |x: &Tensor<f64>| x.softmax(), SYM);
check_unary!(gc_layer_norm, |x: &Tensor<f64>| x.layer_norm(1e-5), SYM);
check_unary!(gc_sum_all, |x: &Tensor<f64>| x.sum_all(), SYM);
check_unary!(gc_mean_all, |x: &Tensor<f64>| x.mean_all(), SYM);

#[test]
fn gc_matmul() {
    let pool = RngPool::new(11);
    let mut stream = pool.stream("matmul");
    for rep in 0..6 {
        let (m, k, n) = (
            stream.gen_range(1..=4usize),
            stream.gen_range(1..=4usize),
            stream.gen_range(1..=4usize),
        );
        let mut ws = pool.substream("matmul_w", rep);
        let w = Tensor::rand_uniform(&[m, n], 0.5, 1.5, &mut ws);
        assert_grads_close(
            "matmul",
            &[&[m, k], &[k, n]],
            &[SYM, SYM],
            |xs| xs[0].matmul(&xs[1]).mul(&w).sum_all(),
            &mut stream,
        );
    }
}

#[test]
fn gc_bmm() {
    let pool = RngPool::new(12);
    let mut stream = pool.stream("bmm");
    for rep in 0..4 {
        let (b, m, k, n) = (
            stream.gen_range(1..=3usize),
            stream.gen_range(1..=3usize),
            stream.gen_range(1..=3usize),
            stream.gen_range(1..=3usize),
        );
        let mut ws = pool.substream("bmm_w", rep);
        let w = Tensor::rand_uniform(&[b, m, n], 0.5, 1.5, &mut ws);
        assert_grads_close(
            "bmm",
            &[&[b, m, k], &[b, k, n]],
            &[SYM, SYM],
            |xs| xs[0].bmm(&xs[1]).mul(&w).sum_all(),
            &mut stream,
        );
    }
}

#[test]
fn gc_conv2d() {
    let pool = RngPool::new(13);
    let mut stream = pool.stream("conv");
    for rep in 0..4 {
        let (b, c, o) = (
            stream.gen_range(1..=2usize),
            stream.gen_range(1..=2usize),
            stream.gen_range(1..=2usize),
        );
        let (h, w) = (stream.gen_range(3..=5usize), stream.gen_range(3..=5usize));
        let stride = 1 + rep % 2;
        let mut ws = pool.substream("conv_w", rep);
        let oh = (h + 2 - 3) / stride + 1;
        let ow = (w + 2 - 3) / stride + 1;
        let wt = Tensor::rand_uniform(&[b, o, oh, ow], 0.5, 1.5, &mut ws);
        assert_grads_close(
            "conv2d",
            &[&[b, c, h, w], &[o, c, 3, 3], &[o]],
            &[SYM, SYM, SYM],
            |xs| xs[0].conv2d(&xs[1], Some(&xs[2]), stride, 1).mul(&wt).sum_all(),
            &mut stream,
        );
    }
}

#[test]
fn gc_upsample() {
    let pool = RngPool::new(14);
    let mut stream = pool.stream("up");
    let mut ws = pool.stream("up_w");
    let w = Tensor::rand_uniform(&[1, 2, 4, 6], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "upsample_nearest_2x",
        &[&[1, 2, 2, 3]],
        &[SYM],
        |xs| xs[0].upsample_nearest_2x().mul(&w).sum_all(),
        &mut stream,
    );
}

#[test]
fn gc_shape_ops() {
    let pool = RngPool::new(15);
    let mut stream = pool.stream("shape");

    let mut ws = pool.stream("shape_w");
    let w = Tensor::rand_uniform(&[6], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "reshape",
        &[&[2, 3]],
        &[SYM],
        |xs| xs[0].reshape(&[6]).mul(&w).sum_all(),
        &mut stream,
    );

    let w = Tensor::rand_uniform(&[3, 2], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "permute",
        &[&[2, 3]],
        &[SYM],
        |xs| xs[0].t2().mul(&w).sum_all(),
        &mut stream,
    );

    let w = Tensor::rand_uniform(&[2, 5], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "concat",
        &[&[2, 2], &[2, 3]],
        &[SYM, SYM],
        |xs| Tensor::concat(&[xs[0].clone(), xs[1].clone()], 1).mul(&w).sum_all(),
        &mut stream,
    );

    let w = Tensor::rand_uniform(&[2, 2], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "narrow",
        &[&[2, 4]],
        &[SYM],
        |xs| xs[0].narrow(1, 1, 2).mul(&w).sum_all(),
        &mut stream,
    );

    let w = Tensor::rand_uniform(&[3, 2], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "select_rows",
        &[&[4, 2]],
        &[SYM],
        |xs| xs[0].select_rows(&[2, 0, 2]).mul(&w).sum_all(),
        &mut stream,
    );

    let w = Tensor::rand_uniform(&[5, 2], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "scatter_rows",
        &[&[2, 2]],
        &[SYM],
        |xs| xs[0].scatter_rows(5, &[3, 1]).mul(&w).sum_all(),
        &mut stream,
    );

    let w = Tensor::rand_uniform(&[4, 3], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "repeat_rows",
        &[&[1, 3]],
        &[SYM],
        |xs| xs[0].repeat_rows(4).mul(&w).sum_all(),
        &mut stream,
    );

    let w = Tensor::rand_uniform(&[4], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "sum_axis",
        &[&[3, 4]],
        &[SYM],
        |xs| xs[0].sum_axis(0).mul(&w).sum_all(),
        &mut stream,
    );

    let w = Tensor::rand_uniform(&[3], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "mean_axis",
        &[&[3, 4]],
        &[SYM],
        |xs| xs[0].mean_axis(1).mul(&w).sum_all(),
        &mut stream,
    );
}

#[test]
fn gc_dropout_fixed_mask() {
    // With the stream fixed, dropout is a deterministic linear map.
    let pool = RngPool::new(16);
    let mut stream = pool.stream("drop");
    let mut ws = pool.stream("drop_w");
    let w = Tensor::rand_uniform(&[3, 3], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "dropout",
        &[&[3, 3]],
        &[SYM],
        |xs| {
            let mut mask_stream = pool.stream("drop_mask");
            xs[0].dropout(0.4, &mut mask_stream).mul(&w).sum_all()
        },
        &mut stream,
    );
}

#[test]
fn gc_softmax_attention_composite() {
    // attention(q,k,v) = softmax(q·kᵀ/sqrt(d)) · v, one head.
    let pool = RngPool::new(17);
    let mut stream = pool.stream("attn");
    let (l, d) = (3, 4);
    let mut ws = pool.stream("attn_w");
    let w = Tensor::rand_uniform(&[l, d], 0.5, 1.5, &mut ws);
    assert_grads_close(
        "attention",
        &[&[l, d], &[l, d], &[l, d]],
        &[SYM, SYM, SYM],
        |xs| {
            let scale = 1.0 / (d as f64).sqrt();
            let scores = xs[0].matmul(&xs[1].t2()).scale(scale).softmax();
            scores.matmul(&xs[2]).mul(&w).sum_all()
        },
        &mut stream,
    );
}
