//! Diffusion noise schedule: linear betas over S training steps, cumulative
//! products, posterior sigmas, and the respaced inference subsequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub inference_steps: usize,
}

impl Default for NoiseScheduleConfig {
    fn default() -> Self {
        NoiseScheduleConfig {
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            inference_steps: 100,
        }
    }
}

/// Training-resolution schedule. Arrays are indexed by step s in 1..=S via
/// `[s-1]`; alpha_bar(0) = 1 by definition.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(cfg: &NoiseScheduleConfig) -> Result<Self> {
        let s = cfg.train_steps;
        if s == 0 {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if cfg.beta_start < 0.0 || cfg.beta_end < cfg.beta_start || cfg.beta_end >= 1.0 {
            return Err(Error::Config(format!(
                "invalid beta range [{}, {}]",
                cfg.beta_start, cfg.beta_end
            )));
        }
        let mut beta = Vec::with_capacity(s);
        for i in 0..s {
            let frac = if s == 1 { 0.0 } else { i as f64 / (s - 1) as f64 };
            beta.push(cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start));
        }
        Ok(Self::from_betas(beta))
    }

    pub fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let sigma = posterior_sigmas(&beta, &alpha_bar);
        NoiseSchedule { beta, alpha, alpha_bar, sigma }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// alpha_bar at step s, with alpha_bar(0) = 1.
    pub fn alpha_bar_at(&self, s: usize) -> f64 {
        if s == 0 {
            1.0
        } else {
            self.alpha_bar[s - 1]
        }
    }

    /// x_s = sqrt(alpha_bar_s) x + sqrt(1 - alpha_bar_s) eps; s in 1..=S.
    pub fn forward_diffuse(&self, x: &[f32], s: usize, eps: &[f32]) -> Vec<f32> {
        assert!(s >= 1 && s <= self.steps(), "diffusion step {s} outside [1, {}]", self.steps());
        let ab = self.alpha_bar_at(s);
        forward_diffuse_with_alpha_bar(x, ab, eps)
    }

    /// Keep `count` evenly spaced training indices (always including the
    /// last step) and recompute per-step quantities from consecutive kept
    /// alpha_bar ratios.
    pub fn respaced(&self, count: usize) -> Result<RespacedSchedule> {
        let s = self.steps();
        if count == 0 || count > s {
            return Err(Error::Config(format!(
                "respaced step count {count} outside [1, {s}]"
            )));
        }
        let mut indices = Vec::with_capacity(count);
        for j in 0..count {
            // Evenly spaced over [1, S], endpoint included.
            let idx = if count == 1 {
                s
            } else {
                1 + ((j as f64) * ((s - 1) as f64) / ((count - 1) as f64)).round() as usize
            };
            if indices.last() != Some(&idx) {
                indices.push(idx);
            }
        }
        debug_assert_eq!(*indices.last().unwrap(), s);

        let alpha_bar: Vec<f64> = indices.iter().map(|&i| self.alpha_bar_at(i)).collect();
        let mut alpha = Vec::with_capacity(indices.len());
        let mut prev = 1.0;
        for &ab in &alpha_bar {
            alpha.push(ab / prev);
            prev = ab;
        }
        let beta: Vec<f64> = alpha.iter().map(|a| 1.0 - a).collect();
        let sigma = posterior_sigmas(&beta, &alpha_bar);
        Ok(RespacedSchedule { indices, alpha, alpha_bar, sigma })
    }
}

fn posterior_sigmas(beta: &[f64], alpha_bar: &[f64]) -> Vec<f64> {
    // sigma_s = sqrt(beta_tilde), beta_tilde = (1 - ab_{s-1})/(1 - ab_s) * beta_s
    let mut sigma = Vec::with_capacity(beta.len());
    for i in 0..beta.len() {
        let ab_prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
        let ab = alpha_bar[i];
        let bt = if ab < 1.0 { (1.0 - ab_prev) / (1.0 - ab) * beta[i] } else { 0.0 };
        sigma.push(bt.max(0.0).sqrt());
    }
    sigma
}

pub fn forward_diffuse_with_alpha_bar(x: &[f32], alpha_bar: f64, eps: &[f32]) -> Vec<f32> {
    assert_eq!(x.len(), eps.len());
    let a = alpha_bar.sqrt() as f32;
    let b = (1.0 - alpha_bar).sqrt() as f32;
    x.iter().zip(eps).map(|(&xv, &ev)| a * xv + b * ev).collect()
}

/// Inference schedule over the kept subsequence. Position j corresponds to
/// training step `indices[j]`; the reverse chain walks j = K-1 down to 0.
#[derive(Debug, Clone)]
pub struct RespacedSchedule {
    pub indices: Vec<usize>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl RespacedSchedule {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// One reverse step at position j:
    /// x_prev = (x - ((1-a)/sqrt(1-ab)) eps_hat) / sqrt(a) + tau sigma delta.
    /// The noise term is omitted at the final step (j == 0).
    pub fn reverse_step(&self, x: &[f32], eps_hat: &[f32], j: usize, tau: f64, delta: Option<&[f32]>) -> Vec<f32> {
        assert!(j < self.len());
        assert_eq!(x.len(), eps_hat.len());
        let a = self.alpha[j];
        let ab = self.alpha_bar[j];
        let coeff = if ab < 1.0 { (1.0 - a) / (1.0 - ab).sqrt() } else { 0.0 };
        let inv_sqrt_a = 1.0 / a.sqrt();
        let mut out: Vec<f32> = x
            .iter()
            .zip(eps_hat)
            .map(|(&xv, &ev)| ((xv as f64 - coeff * ev as f64) * inv_sqrt_a) as f32)
            .collect();
        if j > 0 {
            let noise_scale = tau * self.sigma[j];
            if noise_scale != 0.0 {
                let delta = delta.expect("reverse_step needs noise for non-final steps");
                assert_eq!(delta.len(), x.len());
                for (o, &d) in out.iter_mut().zip(delta) {
                    *o += (noise_scale * d as f64) as f32;
                }
            }
        }
        out
    }
}
