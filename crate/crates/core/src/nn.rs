//! Neural-network building blocks on top of the tensor crate. All model
//! code runs in f32.

use omnicast_tensor::rng::Stream;
use omnicast_tensor::Tensor;

/// Forward-pass context: dropout rate plus the stream that feeds it.
/// `eval()` disables all stochastic behavior.
pub struct ForwardCtx<'a> {
    pub dropout: f64,
    pub stream: Option<&'a mut Stream>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> ForwardCtx<'static> {
        ForwardCtx { dropout: 0.0, stream: None }
    }

    pub fn train(dropout: f64, stream: &'a mut Stream) -> ForwardCtx<'a> {
        ForwardCtx { dropout, stream: Some(stream) }
    }

    pub fn apply_dropout(&mut self, x: &Tensor) -> Tensor {
        match (&mut self.stream, self.dropout > 0.0) {
            (Some(stream), true) => x.dropout(self.dropout, stream),
            _ => x.clone(),
        }
    }
}

fn uniform_init(shape: &[usize], bound: f64, stream: &mut Stream) -> Tensor {
    use rand::Rng;
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| ((stream.gen::<f64>() * 2.0 - 1.0) * bound) as f32).collect();
    Tensor::param(shape, data)
}

/// Affine map x (.., in) -> (.., out). Weight stored (in, out).
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, stream: &mut Stream) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            weight: uniform_init(&[in_dim, out_dim], bound, stream),
            bias: uniform_init(&[out_dim], bound, stream),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.matmul(&self.weight).add(&self.bias)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Layer norm with learnable affine parameters over the last axis.
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::param(&[dim], vec![1.0; dim]),
            beta: Tensor::param(&[dim], vec![0.0; dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.layer_norm(self.eps).mul(&self.gamma).add(&self.beta)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Multi-head bidirectional self-attention (no causal mask).
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, stream: &mut Stream) -> Self {
        assert_eq!(dim % heads, 0, "hidden width {dim} not divisible by heads {heads}");
        MultiHeadAttention {
            qkv: Linear::new(dim, 3 * dim, stream),
            proj: Linear::new(dim, dim, stream),
            heads,
            dim,
        }
    }

    /// x: (L, dim) -> (L, dim), full softmax(QKᵀ/√d)V attention.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let l = x.shape()[0];
        let (h, d) = (self.heads, self.dim);
        let dh = d / h;
        let qkv = self.qkv.forward(x); // (L, 3d)
        let split = |start: usize| {
            qkv.narrow(1, start * d, d)
                .reshape(&[l, h, dh])
                .permute(&[1, 0, 2]) // (h, L, dh)
        };
        let q = split(0);
        let k = split(1);
        let v = split(2);
        let scale = 1.0 / (dh as f64).sqrt();
        let scores = q.bmm(&k.permute(&[0, 2, 1])).scale(scale as f32); // (h, L, L)
        let attn = scores.softmax();
        let ctx = attn.bmm(&v); // (h, L, dh)
        let merged = ctx.permute(&[1, 0, 2]).reshape(&[l, d]);
        self.proj.forward(&merged)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.qkv.named_params(&format!("{prefix}.qkv"), out);
        self.proj.named_params(&format!("{prefix}.proj"), out);
    }
}

/// Pre-norm transformer block with a GELU MLP (ratio 4).
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(dim: usize, heads: usize, stream: &mut Stream) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, stream),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(dim, 4 * dim, stream),
            fc2: Linear::new(4 * dim, dim, stream),
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Tensor {
        let a = self.attn.forward(&self.ln1.forward(x));
        let x = x.add(&ctx.apply_dropout(&a));
        let m = self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&x)).gelu());
        x.add(&ctx.apply_dropout(&m))
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln1.named_params(&format!("{prefix}.ln1"), out);
        self.attn.named_params(&format!("{prefix}.attn"), out);
        self.ln2.named_params(&format!("{prefix}.ln2"), out);
        self.fc1.named_params(&format!("{prefix}.fc1"), out);
        self.fc2.named_params(&format!("{prefix}.fc2"), out);
    }
}

/// 2-D convolution layer, zero-padded.
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        stream: &mut Stream,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d {
            weight: uniform_init(&[out_ch, in_ch, kernel, kernel], bound, stream),
            bias: uniform_init(&[out_ch], bound, stream),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.pad)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Normalize conv features over the channel axis at every spatial position
/// (channels-last layer norm), with per-channel affine parameters.
pub struct ChannelNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl ChannelNorm {
    pub fn new(channels: usize) -> Self {
        ChannelNorm {
            gamma: Tensor::param(&[channels], vec![1.0; channels]),
            beta: Tensor::param(&[channels], vec![0.0; channels]),
        }
    }

    /// x: (B, C, H, W).
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let nhwc = x.permute(&[0, 2, 3, 1]);
        let normed = nhwc.layer_norm(1e-5).mul(&self.gamma).add(&self.beta);
        normed.reshape(&[b, h, w, c]).permute(&[0, 3, 1, 2])
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}
