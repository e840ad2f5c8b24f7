//! Latent maps to flat token sequences: ordering, positions, mask sampling,
//! and [MASK] substitution.

use rand::Rng;

use omnicast_tensor::rng::Stream;
use omnicast_tensor::Tensor;

use crate::error::{Error, Result};

/// Position of one token in the full sequence: frame 0 is the conditioning
/// frame, future frames are 1..=T. Tokens are ordered frame-major then
/// row-major, so full flat index i has frame floor(i / (h*w)).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenPos {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
}

/// Conditioning tokens plus future tokens with position metadata.
pub struct TokenSequence {
    /// (h*w, D) conditioning tokens (never masked).
    pub conditioning: Tensor,
    /// (N, D) future tokens, N = T*h*w.
    pub future: Tensor,
    /// One position per token of the full sequence, length (T+1)*h*w.
    pub positions: Vec<TokenPos>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
}

impl TokenSequence {
    pub fn tokens_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn future_len(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    pub fn total_len(&self) -> usize {
        (self.frames + 1) * self.tokens_per_frame()
    }
}

/// Flatten one (D, h, w) latent map into (h*w, D) token rows, row-major
/// over (row, col).
pub fn flatten_latent(latent: &[f32], d: usize, h: usize, w: usize) -> Vec<f32> {
    assert_eq!(latent.len(), d * h * w);
    let hw = h * w;
    let mut out = vec![0.0f32; hw * d];
    for c in 0..d {
        for p in 0..hw {
            out[p * d + c] = latent[c * hw + p];
        }
    }
    out
}

/// Inverse of [`flatten_latent`]: (h*w, D) rows back to a (D, h, w) map.
pub fn unflatten_tokens(tokens: &[f32], d: usize, h: usize, w: usize) -> Vec<f32> {
    assert_eq!(tokens.len(), d * h * w);
    let hw = h * w;
    let mut out = vec![0.0f32; d * hw];
    for p in 0..hw {
        for c in 0..d {
            out[c * hw + p] = tokens[p * d + c];
        }
    }
    out
}

/// Assemble the token sequence for one training window. `initial` and each
/// entry of `futures` are (D, h, w) latent maps.
pub fn build_sequence(
    initial: &[f32],
    futures: &[&[f32]],
    d: usize,
    h: usize,
    w: usize,
) -> Result<TokenSequence> {
    let expected = d * h * w;
    if initial.len() != expected {
        return Err(Error::Input(format!(
            "initial latent has {} values, expected {}",
            initial.len(),
            expected
        )));
    }
    for (k, f) in futures.iter().enumerate() {
        if f.len() != expected {
            return Err(Error::Input(format!(
                "future latent {k} has {} values, expected {expected}",
                f.len()
            )));
        }
    }
    let t = futures.len();
    let hw = h * w;
    let conditioning = Tensor::from_vec(&[hw, d], flatten_latent(initial, d, h, w));
    let mut future_data = Vec::with_capacity(t * hw * d);
    for f in futures {
        future_data.extend_from_slice(&flatten_latent(f, d, h, w));
    }
    let future = Tensor::from_vec(&[t * hw, d], future_data);
    let mut positions = Vec::with_capacity((t + 1) * hw);
    for frame in 0..=t {
        for row in 0..h {
            for col in 0..w {
                positions.push(TokenPos { frame, row, col });
            }
        }
    }
    Ok(TokenSequence { conditioning, future, positions, frames: t, height: h, width: w, dim: d })
}

/// A sampled binary mask over future tokens.
#[derive(Debug, Clone)]
pub struct MaskPlan {
    pub gamma: f64,
    pub mask: Vec<bool>,
}

impl MaskPlan {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Half-up rounding of gamma*n, the number of masked positions.
pub fn masked_count_for(gamma: f64, n: usize) -> usize {
    (gamma * n as f64 + 0.5).floor() as usize
}

/// Place exactly round(gamma*N) masked positions uniformly at random over
/// all future positions, jointly across space and time.
pub fn sample_mask(n: usize, gamma: f64, stream: &mut Stream) -> Result<MaskPlan> {
    if n == 0 {
        return Err(Error::Input("sample_mask needs at least one token".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("masking ratio {gamma} outside [0,1]")));
    }
    let count = masked_count_for(gamma, n).min(n);
    // Partial Fisher-Yates: the first `count` entries are a uniform sample.
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = stream.gen_range(i..n);
        indices.swap(i, j);
    }
    let mut mask = vec![false; n];
    for &idx in &indices[..count] {
        mask[idx] = true;
    }
    Ok(MaskPlan { gamma, mask })
}

/// Draw gamma ~ U[lo, hi] (training uses [0.5, 1.0]).
pub fn sample_gamma(lo: f64, hi: f64, stream: &mut Stream) -> f64 {
    lo + (hi - lo) * stream.gen::<f64>()
}

/// Replace masked rows of an embedded sequence with the shared learnable
/// mask embedding; visible rows pass through unchanged.
pub fn corrupt(embedded: &Tensor, mask: &[bool], mask_embedding: &Tensor) -> Tensor {
    let (l, e) = (embedded.shape()[0], embedded.shape()[1]);
    assert_eq!(mask.len(), l, "mask length does not match sequence");
    assert_eq!(
        mask_embedding.len(),
        e,
        "mask embedding width {} does not match sequence width {e}",
        mask_embedding.len()
    );
    let keep: Vec<f32> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    let fill: Vec<f32> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let keep_col = Tensor::from_vec(&[l, 1], keep);
    let fill_col = Tensor::from_vec(&[l, 1], fill);
    let emb_row = mask_embedding.reshape(&[1, e]);
    embedded.mul(&keep_col).add(&emb_row.mul(&fill_col))
}

#[cfg(test)]
mod tests {
    use super::*;
    use omnicast_tensor::rng::RngPool;

    #[test]
    fn sequence_lengths_and_positions() {
        // T=44, 8x16 latent: 5760 tokens including the initial condition.
        let (d, h, w) = (2, 8, 16);
        let zero = vec![0.0f32; d * h * w];
        let futures: Vec<&[f32]> = (0..44).map(|_| zero.as_slice()).collect();
        let seq = build_sequence(&zero, &futures, d, h, w).unwrap();
        assert_eq!(seq.total_len(), 5760);
        assert_eq!(seq.future_len(), 44 * 128);
        // Full flat index h*w is the first future token: frame 1, (0, 0).
        let pos = seq.positions[h * w];
        assert_eq!(pos, TokenPos { frame: 1, row: 0, col: 0 });
        // Frame index of any token is floor(i / (h*w)).
        for (i, p) in seq.positions.iter().enumerate() {
            assert_eq!(p.frame, i / (h * w));
        }
    }

    #[test]
    fn tiny_sequence_two_tokens() {
        let init = vec![1.0f32];
        let fut = vec![2.0f32];
        let futures: Vec<&[f32]> = vec![&fut];
        let seq = build_sequence(&init, &futures, 1, 1, 1).unwrap();
        assert_eq!(seq.total_len(), 2);
        assert_eq!(seq.conditioning.shape(), &[1, 1]);
        assert_eq!(seq.future.shape(), &[1, 1]);
    }

    #[test]
    fn flatten_roundtrip() {
        let latent: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let tokens = flatten_latent(&latent, 2, 3, 4);
        assert_eq!(unflatten_tokens(&tokens, 2, 3, 4), latent);
        // token at (row 1, col 2) picks latent[:, 1, 2]
        let p = 4 + 2;
        assert_eq!(tokens[p * 2], latent[p as usize]);
        assert_eq!(tokens[p * 2 + 1], latent[12 + p as usize]);
    }

    #[test]
    fn mask_counts_exact() {
        let pool = RngPool::new(9);
        let plan = sample_mask(100, 0.75, &mut pool.stream("m")).unwrap();
        assert_eq!(plan.masked_count(), 75);
        let plan = sample_mask(100, 1.0, &mut pool.stream("m2")).unwrap();
        assert_eq!(plan.masked_count(), 100);
        let plan = sample_mask(100, 0.0, &mut pool.stream("m3")).unwrap();
        assert_eq!(plan.masked_count(), 0);
        // half-up rounding
        assert_eq!(masked_count_for(0.5, 5), 3);
        assert_eq!(masked_count_for(0.25, 6), 2);
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        let pool = RngPool::new(9);
        assert!(sample_mask(10, 1.5, &mut pool.stream("m")).is_err());
        assert!(sample_mask(10, -0.1, &mut pool.stream("m")).is_err());
    }

    #[test]
    fn mask_marginals_match_gamma() {
        // Each position is masked with empirical frequency gamma within
        // 3 binomial standard deviations.
        let pool = RngPool::new(10);
        let (n, gamma, draws) = (40usize, 0.6, 4000usize);
        let mut counts = vec![0usize; n];
        for rep in 0..draws {
            let plan = sample_mask(n, gamma, &mut pool.substream("m", rep)).unwrap();
            for (c, &m) in counts.iter_mut().zip(&plan.mask) {
                if m {
                    *c += 1;
                }
            }
        }
        let std = (gamma * (1.0 - gamma) / draws as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - gamma).abs() < 3.0 * std + 0.01,
                "position {i} frequency {freq} vs gamma {gamma}"
            );
        }
    }

    #[test]
    fn mask_exchangeable_across_frames() {
        // Chi-square on the per-frame histogram of masked positions.
        let pool = RngPool::new(11);
        let (t, hw) = (8usize, 16usize);
        let n = t * hw;
        let gamma = 0.5;
        let draws = 2000usize;
        let mut frame_counts = vec![0f64; t];
        let mut total = 0f64;
        for rep in 0..draws {
            let plan = sample_mask(n, gamma, &mut pool.substream("m", rep)).unwrap();
            for (i, &m) in plan.mask.iter().enumerate() {
                if m {
                    frame_counts[i / hw] += 1.0;
                    total += 1.0;
                }
            }
        }
        let expected = total / t as f64;
        let chi2: f64 = frame_counts.iter().map(|&c| (c - expected) * (c - expected) / expected).sum();
        // 7 degrees of freedom; 0.999 quantile ~ 24.3
        assert!(chi2 < 24.3, "chi-square {chi2} too large; frame histogram {frame_counts:?}");
    }

    #[test]
    fn corrupt_identity_when_unmasked() {
        let x = Tensor::from_vec(&[3, 2], vec![1., 2., 3., 4., 5., 6.]);
        let emb = Tensor::from_vec(&[2], vec![9., 9.]);
        let y = corrupt(&x, &[false, false, false], &emb);
        assert_eq!(*y.data(), *x.data());
    }

    #[test]
    fn corrupt_masked_rows_share_embedding_and_visible_pass_through() {
        let x = Tensor::from_vec(&[3, 2], vec![1., 2., 3., 4., 5., 6.]);
        let emb = Tensor::from_vec(&[2], vec![7., 8.]);
        let y = corrupt(&x, &[true, false, true], &emb);
        let d = y.data();
        assert_eq!(&d[0..2], &[7., 8.]);
        assert_eq!(&d[2..4], &[3., 4.]); // visible row expressed exactly
        assert_eq!(&d[4..6], &[7., 8.]); // same embedding vector
    }
}
