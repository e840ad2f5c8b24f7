//! AdamW with decoupled weight decay and a linear-warmup + cosine-decay
//! learning-rate schedule.

use crate::element::Element;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            base_lr: 2e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-5,
            warmup_epochs: 10.0,
            total_epochs: 100.0,
        }
    }
}

impl AdamWConfig {
    /// Learning rate at `epoch_fraction` in [0,1]: linear ramp to the base
    /// rate over the warmup window, then cosine decay to zero. The two
    /// branches agree at the boundary.
    pub fn lr_at(&self, epoch_fraction: f64) -> f64 {
        assert!(
            (0.0..=1.0).contains(&epoch_fraction),
            "epoch fraction {epoch_fraction} outside [0,1]"
        );
        let warm = (self.warmup_epochs / self.total_epochs).clamp(0.0, 1.0);
        if epoch_fraction < warm {
            self.base_lr * epoch_fraction / warm
        } else if warm >= 1.0 {
            self.base_lr
        } else {
            let progress = (epoch_fraction - warm) / (1.0 - warm);
            self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("optimizer step rejected: non-finite gradient for parameter {index}")]
pub struct NonFiniteGrad {
    pub index: usize,
}

/// Optimizer state: first/second moment estimates per parameter plus the
/// schedule configuration.
pub struct AdamW<T: Element> {
    cfg: AdamWConfig,
    params: Vec<Tensor<T>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl<T: Element> AdamW<T> {
    pub fn new(params: Vec<Tensor<T>>, cfg: AdamWConfig) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        AdamW { cfg, params, m, v, steps: 0 }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Global-norm gradient clipping. Returns the pre-clip norm.
    pub fn clip_grad_norm(&self, max_norm: f64) -> f64 {
        let mut sq = 0.0f64;
        for p in &self.params {
            if let Some(g) = p.grad() {
                for v in g {
                    let v = v.to_f64();
                    sq += v * v;
                }
            }
        }
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let factor = T::from_f64(max_norm / norm);
            for p in &self.params {
                p.scale_grad(factor);
            }
        }
        norm
    }

    /// One AdamW update using the accumulated gradients. Rejects the whole
    /// step if any gradient is non-finite.
    pub fn step(&mut self, epoch_fraction: f64) -> Result<(), NonFiniteGrad> {
        for (i, p) in self.params.iter().enumerate() {
            if let Some(g) = p.grad() {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(NonFiniteGrad { index: i });
                }
            }
        }
        let lr = self.cfg.lr_at(epoch_fraction);
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, p) in self.params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad[j].to_f64();
                    m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g;
                    v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    let x = data[j].to_f64();
                    let update = m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * x;
                    data[j] = T::from_f64(x - lr * update);
                }
            });
        }
        Ok(())
    }
}
