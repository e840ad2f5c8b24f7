//! Bidirectional encoder-decoder transformer producing a conditioning
//! vector z_i per sequence position. The encoder sees conditioning plus
//! visible tokens only; the decoder sees the full-length sequence with the
//! learnable [MASK] embedding re-inserted at masked positions. Attention is
//! full in both stages (no causal mask).

use serde::{Deserialize, Serialize};

use omnicast_tensor::rng::Stream;
use omnicast_tensor::Tensor;

use crate::nn::{ForwardCtx, LayerNorm, Linear, TransformerBlock};
use crate::tokenizer::{MaskPlan, TokenSequence};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub width: usize,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { encoder_layers: 4, decoder_layers: 4, heads: 4, width: 128, dropout: 0.1 }
    }
}

pub struct Backbone {
    pub config: BackboneConfig,
    pub token_dim: usize,
    pub frames: usize,
    pub height: usize,
    pub width_tokens: usize,
    value_embed: Linear,
    /// (T+1, width): one temporal embedding per frame index, conditioning
    /// frame at index 0.
    temporal_embed: Tensor,
    /// (h*w, width): one spatial embedding per (row, col).
    spatial_embed: Tensor,
    /// (1, width) learnable [MASK] embedding.
    mask_token: Tensor,
    encoder: Vec<TransformerBlock>,
    decoder: Vec<TransformerBlock>,
    final_norm: LayerNorm,
}

fn small_normal(shape: &[usize], std: f64, stream: &mut Stream) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> =
        (0..n).map(|_| (omnicast_tensor::rng_normal(stream) * std) as f32).collect();
    Tensor::param(shape, data)
}

impl Backbone {
    pub fn new(
        config: &BackboneConfig,
        token_dim: usize,
        frames: usize,
        height: usize,
        width_tokens: usize,
        stream: &mut Stream,
    ) -> Self {
        assert_eq!(config.width % config.heads, 0, "width must divide into heads");
        let hw = height * width_tokens;
        Backbone {
            config: config.clone(),
            token_dim,
            frames,
            height,
            width_tokens,
            value_embed: Linear::new(token_dim, config.width, stream),
            temporal_embed: small_normal(&[frames + 1, config.width], 0.02, stream),
            spatial_embed: small_normal(&[hw, config.width], 0.02, stream),
            mask_token: small_normal(&[1, config.width], 0.02, stream),
            encoder: (0..config.encoder_layers)
                .map(|_| TransformerBlock::new(config.width, config.heads, stream))
                .collect(),
            decoder: (0..config.decoder_layers)
                .map(|_| TransformerBlock::new(config.width, config.heads, stream))
                .collect(),
            final_norm: LayerNorm::new(config.width),
        }
    }

    /// Positional embeddings for every token of the full sequence.
    fn positional(&self, seq: &TokenSequence) -> Tensor {
        let frames: Vec<usize> = seq.positions.iter().map(|p| p.frame).collect();
        let spatial: Vec<usize> =
            seq.positions.iter().map(|p| p.row * self.width_tokens + p.col).collect();
        let t = self.temporal_embed.select_rows(&frames);
        let s = self.spatial_embed.select_rows(&spatial);
        t.add(&s)
    }

    /// z vectors for every future position, (N, width). `plan.mask[i]`
    /// refers to future token i; conditioning tokens are never masked.
    pub fn forward(&self, seq: &TokenSequence, plan: &MaskPlan, ctx: &mut ForwardCtx) -> Tensor {
        let hw = seq.tokens_per_frame();
        let n_future = seq.future_len();
        assert_eq!(plan.mask.len(), n_future, "mask length does not match sequence");
        assert_eq!(seq.dim, self.token_dim, "token dim mismatch");
        let total = seq.total_len();

        // Value embeddings for the full sequence, then positions.
        let tokens = Tensor::concat(&[seq.conditioning.clone(), seq.future.clone()], 0);
        let values = self.value_embed.forward(&tokens);
        let pos = self.positional(seq);
        let embedded = values.add(&pos);

        // Encoder: conditioning plus visible future tokens.
        let mut visible_full: Vec<usize> = (0..hw).collect();
        visible_full.extend(plan.visible_indices().iter().map(|&i| hw + i));
        let mut x = embedded.select_rows(&visible_full);
        for block in &self.encoder {
            x = block.forward(&x, ctx);
        }

        // Decoder: full-length sequence, [MASK] embeddings re-inserted at
        // masked positions, positional embeddings added again.
        let masked_full: Vec<usize> = plan.masked_indices().iter().map(|&i| hw + i).collect();
        let mut dec_in = x.scatter_rows(total, &visible_full);
        if !masked_full.is_empty() {
            let mask_rows = self.mask_token.repeat_rows(masked_full.len());
            dec_in = dec_in.add(&mask_rows.scatter_rows(total, &masked_full));
        }
        let mut y = dec_in.add(&pos);
        for block in &self.decoder {
            y = block.forward(&y, ctx);
        }
        let z_all = self.final_norm.forward(&y);
        // Readout: future positions only (conditioning z computed, unused).
        let future_rows: Vec<usize> = (hw..total).collect();
        z_all.select_rows(&future_rows)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.value_embed.named_params("backbone.value_embed", &mut out);
        out.push(("backbone.temporal_embed".into(), self.temporal_embed.clone()));
        out.push(("backbone.spatial_embed".into(), self.spatial_embed.clone()));
        out.push(("backbone.mask_token".into(), self.mask_token.clone()));
        for (i, b) in self.encoder.iter().enumerate() {
            b.named_params(&format!("backbone.encoder.{i}"), &mut out);
        }
        for (i, b) in self.decoder.iter().enumerate() {
            b.named_params(&format!("backbone.decoder.{i}"), &mut out);
        }
        self.final_norm.named_params("backbone.final_norm", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }
}
