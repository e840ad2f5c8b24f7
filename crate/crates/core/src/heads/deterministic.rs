//! Auxiliary deterministic head: predicts x_i directly from z_i, trained
//! with an exponentially frame-weighted MSE restricted to early frames.

use omnicast_tensor::rng::Stream;
use omnicast_tensor::Tensor;

use crate::nn::Linear;

/// Per-future-token weights: tokens of future frame k (0-based) carry
/// weight e^-k, zeroed at and beyond the cutoff frame, normalized so all
/// future-token weights sum to one.
#[derive(Debug, Clone)]
pub struct FrameWeights {
    pub weights: Vec<f64>,
    pub cutoff: usize,
}

impl FrameWeights {
    pub fn new(frames: usize, tokens_per_frame: usize, cutoff: usize) -> Self {
        let mut weights = Vec::with_capacity(frames * tokens_per_frame);
        for k in 0..frames {
            let w = if k < cutoff { (-(k as f64)).exp() } else { 0.0 };
            weights.extend(std::iter::repeat(w).take(tokens_per_frame));
        }
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            for w in &mut weights {
                *w /= total;
            }
        }
        FrameWeights { weights, cutoff }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Two-layer MLP head producing deterministic predictions from z.
pub struct DeterministicHead {
    fc1: Linear,
    fc2: Linear,
}

impl DeterministicHead {
    pub fn new(cond_width: usize, hidden: usize, token_dim: usize, stream: &mut Stream) -> Self {
        DeterministicHead {
            fc1: Linear::new(cond_width, hidden, stream),
            fc2: Linear::new(hidden, token_dim, stream),
        }
    }

    /// x_hat from z, (n, D).
    pub fn predict(&self, z: &Tensor) -> Tensor {
        self.fc2.forward(&self.fc1.forward(z).silu())
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.fc1.named_params("deter_head.fc1", &mut out);
        self.fc2.named_params("deter_head.fc2", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }
}

/// Weighted MSE over masked positions: sum_i w(i) ||x_i - x_hat_i||^2.
/// `token_weights` holds the weight of each row (already the per-token
/// frame weight of that masked position).
pub fn deter_loss(targets: &Tensor, predictions: &Tensor, token_weights: &[f64]) -> Tensor {
    assert_eq!(targets.shape(), predictions.shape(), "deter_loss shape mismatch");
    let n = targets.shape()[0];
    assert_eq!(token_weights.len(), n, "one weight per masked token required");
    if n == 0 {
        return Tensor::scalar(0.0);
    }
    let w = Tensor::from_vec(&[n, 1], token_weights.iter().map(|&v| v as f32).collect());
    predictions.sub(targets).square().mul(&w).sum_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use omnicast_tensor::rng::RngPool;

    #[test]
    fn weights_match_geometric_series() {
        // h*w = 1, T >= 10: w_k = e^-k / sum_{j<10} e^-j.
        let fw = FrameWeights::new(12, 1, 10);
        let denom: f64 = (0..10).map(|j| (-(j as f64)).exp()).sum();
        assert!((fw.weights[0] - 1.0 / denom).abs() < 1e-12);
        assert!((fw.weights[0] - 0.6321).abs() < 1e-4, "w_0 = {}", fw.weights[0]);
        assert!((fw.weights[9] - (-9.0f64).exp() / denom).abs() < 1e-12);
        assert!((fw.weights[9] - 7.8e-5).abs() < 1e-5, "w_9 = {}", fw.weights[9]);
        // beyond the cutoff: exactly zero
        assert_eq!(fw.weights[10], 0.0);
        assert_eq!(fw.weights[11], 0.0);
    }

    #[test]
    fn weights_sum_to_one_with_spatial_tokens() {
        for (frames, hw, cutoff) in [(8usize, 16usize, 10usize), (44, 128, 10), (3, 4, 44)] {
            let fw = FrameWeights::new(frames, hw, cutoff);
            assert!((fw.sum() - 1.0).abs() < 1e-9, "weights sum {} for T={frames}", fw.sum());
            // all tokens of one frame share a weight
            for k in 0..frames {
                let base = fw.weights[k * hw];
                assert!(fw.weights[k * hw..(k + 1) * hw].iter().all(|&w| w == base));
            }
        }
    }

    #[test]
    fn perfect_prediction_zero_loss() {
        let pool = RngPool::new(41);
        let x = Tensor::randn(&[5, 3], &mut pool.stream("x"));
        let w = vec![0.2; 5];
        assert_eq!(deter_loss(&x, &x, &w).item(), 0.0);
    }

    #[test]
    fn loss_weights_scale_contributions() {
        let t = Tensor::from_vec(&[2, 1], vec![0.0, 0.0]);
        let p = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]);
        let loss = deter_loss(&t, &p, &[0.75, 0.25]).item();
        assert!((loss - 1.0).abs() < 1e-6);
        let loss2 = deter_loss(&t, &p, &[0.75, 0.0]).item();
        assert!((loss2 - 0.75).abs() < 1e-6);
    }
}
