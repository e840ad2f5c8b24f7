//! Stage-two training: masked-token diffusion loss plus the weighted
//! deterministic loss over precomputed (frozen-VAE) latents.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use omnicast_tensor::optim::{AdamW, AdamWConfig};
use omnicast_tensor::rng::RngPool;
use omnicast_tensor::{no_grad, Tensor};

use crate::data::FrameRange;
use crate::error::{Error, Result};
use crate::heads::{deter_loss, diffusion_loss, FrameWeights};
use crate::model::ForecastModel;
use crate::nn::ForwardCtx;
use crate::tokenizer::{build_sequence, sample_gamma, sample_mask, TokenSequence};
use crate::vae::train::LatentScale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    Default,
    NoMse,
    MseAllFrames,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Sequence length T (future frames per example).
    pub seq_len: usize,
    /// Lead interval between consecutive frames of a training window.
    pub frame_interval_hours: i64,
    pub mask_ratio_min: f64,
    pub mask_ratio_max: f64,
    /// Deterministic loss covers future frames 0..cutoff.
    pub mse_frame_cutoff: usize,
    pub loss_variant: LossVariant,
    pub seed: u64,
    pub steps_per_epoch: usize,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Validation windows per epoch (evaluation mode).
    pub val_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 2,
            seq_len: 8,
            frame_interval_hours: 24,
            mask_ratio_min: 0.5,
            mask_ratio_max: 1.0,
            mse_frame_cutoff: 10,
            loss_variant: LossVariant::Default,
            seed: 0,
            steps_per_epoch: 64,
            base_lr: 2e-4,
            warmup_epochs: 2.0,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 1e-5,
            grad_clip: 1.0,
            val_windows: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio_min)
            || !(0.0..=1.0).contains(&self.mask_ratio_max)
            || self.mask_ratio_min > self.mask_ratio_max
        {
            return Err(Error::Config(format!(
                "mask ratio range [{}, {}] must lie inside [0,1]",
                self.mask_ratio_min, self.mask_ratio_max
            )));
        }
        if self.seq_len == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, batch size and seq_len must be positive".into()));
        }
        Ok(())
    }

    /// Effective frame weight cutoff for the configured loss variant.
    pub fn effective_cutoff(&self) -> usize {
        match self.loss_variant {
            LossVariant::MseAllFrames => usize::MAX,
            _ => self.mse_frame_cutoff,
        }
    }
}

/// Precomputed latent maps for every dataset frame, in latent (un-scaled)
/// space, plus the split layout inherited from the field dataset.
pub struct LatentDataset {
    pub latents: Vec<f32>,
    pub frames: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub scale: LatentScale,
    pub train: FrameRange,
    pub val: FrameRange,
    pub test: FrameRange,
    pub data_interval_hours: i64,
}

impl LatentDataset {
    pub fn latent_len(&self) -> usize {
        self.dim * self.height * self.width
    }

    /// One standardized (D,h,w) latent map.
    pub fn standardized_frame(&self, idx: usize) -> Vec<f32> {
        let ll = self.latent_len();
        self.latents[idx * ll..(idx + 1) * ll]
            .iter()
            .map(|&v| ((v as f64 - self.scale.mean) / self.scale.std) as f32)
            .collect()
    }

    /// Frame stride of a training window for the requested lead interval.
    pub fn frame_stride(&self, interval_hours: i64) -> Result<usize> {
        if interval_hours % self.data_interval_hours != 0 {
            return Err(Error::Config(format!(
                "training interval {interval_hours}h is not a multiple of the data interval {}h",
                self.data_interval_hours
            )));
        }
        Ok((interval_hours / self.data_interval_hours) as usize)
    }

    /// Window starts whose conditioning and all future frames stay inside
    /// `range`.
    pub fn window_starts(&self, range: FrameRange, t: usize, stride: usize) -> Vec<usize> {
        let span = t * stride;
        if range.len() <= span {
            return Vec::new();
        }
        (range.start..range.end - span).collect()
    }

    /// Build the standardized token sequence for a window.
    pub fn window_sequence(&self, start: usize, t: usize, stride: usize) -> Result<TokenSequence> {
        let initial = self.standardized_frame(start);
        let futures: Vec<Vec<f32>> =
            (1..=t).map(|k| self.standardized_frame(start + k * stride)).collect();
        let refs: Vec<&[f32]> = futures.iter().map(|f| f.as_slice()).collect();
        build_sequence(&initial, &refs, self.dim, self.height, self.width)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_gen: f64,
    pub train_deter: f64,
    pub val_gen: f64,
    pub val_deter: f64,
    pub lr: f64,
}

pub struct StepLosses {
    pub generative: f64,
    pub deterministic: f64,
}

/// One optimizer step over a batch of windows: sample gamma and mask per
/// example, corrupt, run the backbone, add the diffusion and deterministic
/// objectives, and update. Aborts (without stepping) on a non-finite loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &ForecastModel,
    dataset: &LatentDataset,
    starts: &[usize],
    stride: usize,
    cfg: &TrainConfig,
    opt: &mut AdamW<f32>,
    epoch_fraction: f64,
    pool: &RngPool,
    step_id: u64,
) -> Result<StepLosses> {
    let t = cfg.seq_len;
    let hw = dataset.height * dataset.width;
    let weights = FrameWeights::new(t, hw, cfg.effective_cutoff().min(t));
    let mut gen_total = 0.0;
    let mut deter_total = 0.0;
    opt.zero_grad();
    let inv_batch = 1.0 / starts.len() as f32;

    for (i, &start) in starts.iter().enumerate() {
        let mut stream = pool.stream(&format!("train/step{step_id}/example{i}"));
        let seq = dataset.window_sequence(start, t, stride)?;
        let gamma = sample_gamma(cfg.mask_ratio_min, cfg.mask_ratio_max, &mut stream);
        let plan = sample_mask(seq.future_len(), gamma, &mut stream)?;
        let masked = plan.masked_indices();

        let mut ctx = ForwardCtx::train(model.config.backbone.dropout, &mut stream);
        let z = model.backbone.forward(&seq, &plan, &mut ctx);
        let z_masked = z.select_rows(&masked);
        let targets = seq.future.select_rows(&masked);

        let mut diff_stream = pool.stream(&format!("train/step{step_id}/example{i}/diffusion"));
        let gen = diffusion_loss(&model.diffusion_head, &targets, &z_masked, &model.schedule, &mut diff_stream);

        let deter = match cfg.loss_variant {
            LossVariant::NoMse => Tensor::scalar(0.0),
            _ => {
                let w: Vec<f64> = masked.iter().map(|&idx| weights.weights[idx]).collect();
                let preds = model.deter_head.predict(&z_masked);
                deter_loss(&targets, &preds, &w)
            }
        };

        let gen_v = gen.item() as f64;
        let deter_v = deter.item() as f64;
        if !gen_v.is_finite() || !deter_v.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss non-finite at step {step_id} (gen {gen_v}, deter {deter_v})"
            )));
        }
        gen_total += gen_v;
        deter_total += deter_v;

        // Total objective: L_gen + L_deter, averaged over the batch.
        gen.add(&deter).scale(inv_batch).backward();
    }

    opt.clip_grad_norm(cfg.grad_clip);
    opt.step(epoch_fraction).map_err(|e| Error::Numeric(format!("optimizer: {e}")))?;
    Ok(StepLosses {
        generative: gen_total / starts.len() as f64,
        deterministic: deter_total / starts.len() as f64,
    })
}

/// Validation losses in evaluation mode (dropout off, fixed streams per
/// epoch: repeated evaluation is bit-stable).
pub fn validation_losses(
    model: &ForecastModel,
    dataset: &LatentDataset,
    starts: &[usize],
    stride: usize,
    cfg: &TrainConfig,
    pool: &RngPool,
    tag: u64,
) -> Result<StepLosses> {
    let t = cfg.seq_len;
    let hw = dataset.height * dataset.width;
    let weights = FrameWeights::new(t, hw, cfg.effective_cutoff().min(t));
    let mut gen_total = 0.0;
    let mut deter_total = 0.0;
    no_grad(|| -> Result<()> {
        for (i, &start) in starts.iter().enumerate() {
            let mut stream = pool.stream(&format!("val/{tag}/example{i}"));
            let seq = dataset.window_sequence(start, t, stride)?;
            let gamma = sample_gamma(cfg.mask_ratio_min, cfg.mask_ratio_max, &mut stream);
            let plan = sample_mask(seq.future_len(), gamma, &mut stream)?;
            let masked = plan.masked_indices();
            let z = model.backbone.forward(&seq, &plan, &mut ForwardCtx::eval());
            let z_masked = z.select_rows(&masked);
            let targets = seq.future.select_rows(&masked);
            let gen = diffusion_loss(&model.diffusion_head, &targets, &z_masked, &model.schedule, &mut stream);
            gen_total += gen.item() as f64;
            if cfg.loss_variant != LossVariant::NoMse {
                let w: Vec<f64> = masked.iter().map(|&idx| weights.weights[idx]).collect();
                let preds = model.deter_head.predict(&z_masked);
                deter_total += deter_loss(&targets, &preds, &w).item() as f64;
            }
        }
        Ok(())
    })?;
    Ok(StepLosses {
        generative: gen_total / starts.len().max(1) as f64,
        deterministic: deter_total / starts.len().max(1) as f64,
    })
}

/// Full training run. Returns per-epoch statistics; the model holds the
/// parameters of the best validation epoch.
pub fn train_run(
    model: &ForecastModel,
    dataset: &LatentDataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let pool = RngPool::new(cfg.seed);
    let stride = dataset.frame_stride(cfg.frame_interval_hours)?;
    let train_starts = dataset.window_starts(dataset.train, cfg.seq_len, stride);
    if train_starts.is_empty() {
        return Err(Error::Input("no training windows: dataset too short for the sequence length".into()));
    }
    let val_range = if dataset.val.is_empty() { dataset.train } else { dataset.val };
    let val_all = dataset.window_starts(val_range, cfg.seq_len, stride);
    let val_step = (val_all.len() / cfg.val_windows.max(1)).max(1);
    let val_starts: Vec<usize> = val_all.iter().copied().step_by(val_step).take(cfg.val_windows).collect();

    let opt_cfg = AdamWConfig {
        base_lr: cfg.base_lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
        warmup_epochs: cfg.warmup_epochs,
        total_epochs: cfg.epochs as f64,
    };
    let mut opt = AdamW::new(model.params(), opt_cfg.clone());

    let named = model.named_params();
    let mut best_val = f64::INFINITY;
    let mut best_params: Vec<Vec<f32>> = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step_id = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order = train_starts.clone();
        order.shuffle(&mut pool.substream("train/shuffle", epoch));
        order.truncate(cfg.steps_per_epoch * cfg.batch_size);

        let epoch_fraction = epoch as f64 / cfg.epochs as f64;
        let (mut gen_sum, mut deter_sum, mut steps) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let losses =
                train_step(model, dataset, batch, stride, cfg, &mut opt, epoch_fraction, &pool, step_id)?;
            gen_sum += losses.generative;
            deter_sum += losses.deterministic;
            steps += 1;
            step_id += 1;
        }

        let val = if val_starts.is_empty() {
            StepLosses { generative: f64::NAN, deterministic: f64::NAN }
        } else {
            validation_losses(model, dataset, &val_starts, stride, cfg, &pool, epoch as u64)?
        };
        let val_total = val.generative + val.deterministic;
        history.push(EpochStats {
            epoch,
            train_gen: gen_sum / steps as f64,
            train_deter: deter_sum / steps as f64,
            val_gen: val.generative,
            val_deter: val.deterministic,
            lr: opt_cfg.lr_at(epoch_fraction),
        });
        if val_total.is_finite() && val_total < best_val {
            best_val = val_total;
            best_params = named.iter().map(|(_, t)| t.to_vec()).collect();
        }
    }

    if !best_params.is_empty() {
        for ((_, tensor), data) in named.iter().zip(&best_params) {
            tensor.set_data(data);
        }
    }
    Ok(history)
}
