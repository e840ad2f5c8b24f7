//! Stage-one training: fit the VAE on normalized training frames, pick the
//! best validation checkpoint, then freeze scalar latent statistics for
//! stage two.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use omnicast_tensor::optim::{AdamW, AdamWConfig};
use omnicast_tensor::rng::RngPool;
use omnicast_tensor::{no_grad, Tensor};

use crate::data::FieldDataset;
use crate::error::{Error, Result};
use crate::vae::{vae_loss, Vae, VaeConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Frames sampled per epoch (the full split can be much larger).
    pub frames_per_epoch: usize,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Validation frames used for checkpoint selection.
    pub val_frames: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            epochs: 20,
            batch_size: 8,
            frames_per_epoch: 512,
            base_lr: 2e-4,
            warmup_epochs: 2.0,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 1e-5,
            val_frames: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VaeEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_recon: f64,
    pub train_kl: f64,
    pub val_recon: f64,
    pub lr: f64,
}

/// Scalar latent statistics over the training set; stage two standardizes
/// tokens with these before the diffusion head sees them.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LatentScale {
    pub mean: f64,
    pub std: f64,
}

impl LatentScale {
    pub fn identity() -> Self {
        LatentScale { mean: 0.0, std: 1.0 }
    }
}

/// Collect a batch of normalized frames into a (B, V, H, W) tensor.
fn batch_tensor(dataset: &FieldDataset, indices: &[usize]) -> Tensor {
    let fl = dataset.frame_len();
    let hw = dataset.manifest.height * dataset.manifest.width;
    let mut data = Vec::with_capacity(indices.len() * fl);
    for &idx in indices {
        let mut frame = dataset.frame_raw(idx).to_vec();
        dataset.manifest.normalization.normalize_frame(&mut frame, hw);
        data.extend_from_slice(&frame);
    }
    Tensor::from_vec(
        &[indices.len(), dataset.manifest.channels, dataset.manifest.height, dataset.manifest.width],
        data,
    )
}

/// Mean reconstruction MSE of the latent mean path on the given frames
/// (evaluation mode: no sampling).
pub fn reconstruction_mse(vae: &Vae, dataset: &FieldDataset, indices: &[usize], pool: &RngPool) -> f64 {
    let mut total = 0.0;
    no_grad(|| {
        for chunk in indices.chunks(8) {
            let frames = batch_tensor(dataset, chunk);
            let latent = vae.encode(&frames, &mut pool.stream("vae/val_noise_unused"));
            let recon = vae.decode(&latent.mean);
            let mse = recon.sub(&frames).square().mean_all().item() as f64;
            total += mse * chunk.len() as f64;
        }
    });
    total / indices.len() as f64
}

pub fn train_vae(
    dataset: &FieldDataset,
    cfg: &VaeConfig,
    tcfg: &VaeTrainConfig,
    pool: &RngPool,
) -> Result<(Vae, Vec<VaeEpochStats>)> {
    cfg.validate(dataset.manifest.height, dataset.manifest.width)?;
    if dataset.manifest.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let vae = Vae::new(cfg, &mut pool.stream("vae/init"));
    let opt_cfg = AdamWConfig {
        base_lr: tcfg.base_lr,
        beta1: tcfg.beta1,
        beta2: tcfg.beta2,
        eps: 1e-8,
        weight_decay: tcfg.weight_decay,
        warmup_epochs: tcfg.warmup_epochs,
        total_epochs: tcfg.epochs as f64,
    };
    let mut opt = AdamW::new(vae.params(), opt_cfg.clone());

    let train_indices: Vec<usize> = (dataset.manifest.train.start..dataset.manifest.train.end).collect();
    let val_range = if dataset.manifest.val.is_empty() { dataset.manifest.train } else { dataset.manifest.val };
    let val_step = (val_range.len() / tcfg.val_frames.max(1)).max(1);
    let val_indices: Vec<usize> =
        (val_range.start..val_range.end).step_by(val_step).take(tcfg.val_frames).collect();

    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_params: Vec<Vec<f32>> = Vec::new();
    let named = vae.named_params();

    for epoch in 0..tcfg.epochs {
        let mut order = train_indices.clone();
        order.shuffle(&mut pool.substream("vae/shuffle", epoch));
        order.truncate(tcfg.frames_per_epoch.max(tcfg.batch_size));

        let mut noise = pool.substream("vae/noise", epoch);
        let epoch_fraction = epoch as f64 / tcfg.epochs as f64;
        let lr = opt_cfg.lr_at(epoch_fraction);
        let (mut sum_loss, mut sum_recon, mut sum_kl, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let frames = batch_tensor(dataset, chunk);
            let latent = vae.encode(&frames, &mut noise);
            let recon = vae.decode(&latent.sample);
            let loss = vae_loss(&frames, &recon, &latent, cfg.kl_weight);
            let total = loss.total.item() as f64;
            if !total.is_finite() {
                return Err(Error::Numeric(format!("vae loss non-finite at epoch {epoch}")));
            }
            opt.zero_grad();
            loss.total.backward();
            opt.clip_grad_norm(1.0);
            opt.step(epoch_fraction)
                .map_err(|e| Error::Numeric(format!("vae optimizer: {e}")))?;
            sum_loss += total;
            sum_recon += loss.reconstruction;
            sum_kl += loss.kl;
            batches += 1;
        }

        let val_recon = reconstruction_mse(&vae, dataset, &val_indices, pool);
        history.push(VaeEpochStats {
            epoch,
            train_loss: sum_loss / batches as f64,
            train_recon: sum_recon / batches as f64,
            train_kl: sum_kl / batches as f64,
            val_recon,
            lr,
        });
        if val_recon < best_val {
            best_val = val_recon;
            best_params = named.iter().map(|(_, t)| t.to_vec()).collect();
        }
    }

    if !best_params.is_empty() {
        for ((_, tensor), data) in named.iter().zip(&best_params) {
            tensor.set_data(data);
        }
    }
    Ok((vae, history))
}

/// Encode every frame of the dataset to latent means (normalized input
/// space), returning (frames, D, h, w) data.
pub fn encode_dataset(vae: &Vae, dataset: &FieldDataset, pool: &RngPool) -> (Vec<f32>, [usize; 4]) {
    let total = dataset.manifest.total_frames();
    let (d, lh, lw) = vae.config.latent_shape(dataset.manifest.height, dataset.manifest.width);
    let mut out = Vec::with_capacity(total * d * lh * lw);
    no_grad(|| {
        let indices: Vec<usize> = (0..total).collect();
        for chunk in indices.chunks(16) {
            let frames = batch_tensor(dataset, chunk);
            let latent = vae.encode(&frames, &mut pool.stream("vae/encode_dataset_unused"));
            out.extend_from_slice(&latent.mean.data());
        }
    });
    (out, [total, d, lh, lw])
}

/// Scalar mean/std of latent values over the training split.
pub fn latent_scale(latents: &[f32], latent_len: usize, train_frames: std::ops::Range<usize>) -> LatentScale {
    let mut sum = 0.0f64;
    let mut sq = 0.0f64;
    let mut count = 0.0f64;
    for f in train_frames {
        for &v in &latents[f * latent_len..(f + 1) * latent_len] {
            sum += v as f64;
            sq += (v as f64) * (v as f64);
            count += 1.0;
        }
    }
    let mean = sum / count;
    let std = (sq / count - mean * mean).max(1e-12).sqrt();
    LatentScale { mean, std }
}
