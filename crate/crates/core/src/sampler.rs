//! Inference: iterative parallel decoding with a cosine unmasking
//! schedule, ensemble generation with optional IC perturbation, and the
//! autoregressive rollout mode for models trained on short sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use omnicast_tensor::rng::{RngPool, Stream};
use omnicast_tensor::{no_grad, Tensor};

use crate::data::{FieldGrid, Normalization};
use crate::error::{Error, Result};
use crate::model::ForecastModel;
use crate::nn::ForwardCtx;
use crate::tokenizer::{unflatten_tokens, MaskPlan, TokenPos, TokenSequence};
use crate::vae::Vae;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnmaskOrder {
    Random,
    RandomFramewise,
    AutoregressiveFramewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    Joint,
    AutoregressiveRollout,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Unmasking iterations K; absent means one per future frame (K = T).
    pub iterations: Option<usize>,
    pub unmask_order: UnmaskOrder,
    pub temperature: f64,
    pub diffusion_steps: usize,
    pub members: usize,
    pub ic_noise_std: f64,
    pub mode: SamplerMode,
    /// Rollout horizon in hours (autoregressive mode only).
    pub horizon_hours: Option<i64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: None,
            unmask_order: UnmaskOrder::Random,
            temperature: 1.3,
            diffusion_steps: 100,
            members: 50,
            ic_noise_std: 0.0,
            mode: SamplerMode::Joint,
            horizon_hours: None,
        }
    }
}

/// One generated member: decoded physical-unit fields at each lead.
pub struct MemberForecast {
    pub fields: Vec<FieldGrid>,
    /// Stream prefix the member's randomness was derived from.
    pub stream_prefix: String,
}

pub struct EnsembleForecast {
    pub members: Vec<MemberForecast>,
    pub lead_hours: Vec<i64>,
    pub ic_timestamp_hours: i64,
    pub seed: u64,
    pub config: SamplerConfig,
}

/// Cosine unmasking schedule: remaining masked after iteration t is
/// round(N cos(pi t / 2K)); per-iteration counts are successive
/// differences, repaired so every count is at least one (taking from the
/// largest counts) while preserving the total N.
pub fn unmask_counts(n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("iteration count {k} outside [1, {n}]")));
    }
    let mut counts = Vec::with_capacity(k);
    let mut prev = n as i64;
    for t in 1..=k {
        let remaining = if t == k {
            0
        } else {
            (n as f64 * (std::f64::consts::PI * t as f64 / (2.0 * k as f64)).cos()).round() as i64
        };
        counts.push(prev - remaining);
        prev = remaining;
    }
    // Repair non-positive counts from the largest steps.
    loop {
        let Some(deficit_idx) = counts.iter().position(|&c| c < 1) else { break };
        let (max_idx, _) = counts
            .iter()
            .enumerate()
            .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
            .expect("counts nonempty");
        if counts[max_idx] <= 1 {
            return Err(Error::Config(format!("cannot repair unmask counts for N={n}, K={k}")));
        }
        counts[max_idx] -= 1;
        counts[deficit_idx] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<i64>(), n as i64);
    Ok(counts.into_iter().map(|c| c as usize).collect())
}

/// Choose which masked positions to reveal this iteration.
///
/// random: uniform over all masked positions; random-framewise: one whole
/// frame chosen uniformly among frames with masked tokens; autoregressive-
/// framewise: the whole lowest-lead frame. Framewise orders ignore `count`.
pub fn pick_positions(
    masked: &[usize],
    order: UnmaskOrder,
    count: usize,
    tokens_per_frame: usize,
    stream: &mut Stream,
) -> Vec<usize> {
    match order {
        UnmaskOrder::Random => {
            assert!(count <= masked.len(), "cannot reveal {count} of {} masked", masked.len());
            let mut pool: Vec<usize> = masked.to_vec();
            for i in 0..count {
                let j = stream.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(count);
            pool
        }
        UnmaskOrder::RandomFramewise => {
            let mut frames: Vec<usize> = masked.iter().map(|&i| i / tokens_per_frame).collect();
            frames.dedup();
            let frame = frames[stream.gen_range(0..frames.len())];
            masked.iter().copied().filter(|&i| i / tokens_per_frame == frame).collect()
        }
        UnmaskOrder::AutoregressiveFramewise => {
            let frame = masked[0] / tokens_per_frame;
            masked.iter().copied().filter(|&i| i / tokens_per_frame == frame).collect()
        }
    }
}

struct MemberOutput {
    /// Latent-scale token rows, (N, D).
    latent_tokens: Vec<f32>,
}

/// Run the iterative decoding loop for one member given standardized
/// conditioning tokens. Every future token is sampled exactly once.
fn decode_member_tokens(
    model: &ForecastModel,
    conditioning: Tensor,
    cfg: &SamplerConfig,
    pool: &RngPool,
    prefix: &str,
) -> Result<MemberOutput> {
    let dims = model.dims;
    let hw = dims.tokens_per_frame();
    let n = dims.future_tokens();
    let d = dims.dim;
    let respaced = model.schedule.respaced(cfg.diffusion_steps)?;

    let k = cfg.iterations.unwrap_or(dims.frames);
    let counts = match cfg.unmask_order {
        UnmaskOrder::Random => unmask_counts(n, k)?,
        // Framewise orders reveal whole frames; counts come from the frames.
        _ => vec![hw; dims.frames],
    };

    let mut positions = Vec::with_capacity((dims.frames + 1) * hw);
    for frame in 0..=dims.frames {
        for row in 0..dims.height {
            for col in 0..dims.width {
                positions.push(TokenPos { frame, row, col });
            }
        }
    }

    let mut std_tokens = vec![0.0f32; n * d];
    let mut latent_tokens = vec![0.0f32; n * d];
    let mut masked_flags = vec![true; n];
    let mut sampled_count = vec![0u32; n];
    let mut order_stream = pool.stream(&format!("{prefix}/order"));

    no_grad(|| -> Result<()> {
        for &count in &counts {
            let masked: Vec<usize> =
                masked_flags.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
            if masked.is_empty() {
                break;
            }
            let seq = TokenSequence {
                conditioning: conditioning.clone(),
                future: Tensor::from_vec(&[n, d], std_tokens.clone()),
                positions: positions.clone(),
                frames: dims.frames,
                height: dims.height,
                width: dims.width,
                dim: d,
            };
            let plan = MaskPlan { gamma: masked.len() as f64 / n as f64, mask: masked_flags.clone() };
            let z = model.backbone.forward(&seq, &plan, &mut ForwardCtx::eval());

            let chosen = pick_positions(
                &masked,
                cfg.unmask_order,
                count.min(masked.len()),
                hw,
                &mut order_stream,
            );
            let z_sel = z.select_rows(&chosen);
            let mut streams: Vec<Stream> =
                chosen.iter().map(|&i| pool.stream(&format!("{prefix}/token{i}"))).collect();
            let sampled = model.diffusion_head.sample_tokens_each(
                &z_sel,
                cfg.temperature,
                &respaced,
                &model.latent_scale,
                &mut streams,
            );
            for (row, &idx) in chosen.iter().enumerate() {
                let token = &sampled[row * d..(row + 1) * d];
                latent_tokens[idx * d..(idx + 1) * d].copy_from_slice(token);
                for (j, &v) in token.iter().enumerate() {
                    std_tokens[idx * d + j] =
                        ((v as f64 - model.latent_scale.mean) / model.latent_scale.std) as f32;
                }
                masked_flags[idx] = false;
                sampled_count[idx] += 1;
            }
        }
        Ok(())
    })?;

    if masked_flags.iter().any(|&m| m) {
        return Err(Error::Numeric("decoding finished with masked positions remaining".into()));
    }
    debug_assert!(sampled_count.iter().all(|&c| c == 1), "every token sampled exactly once");
    Ok(MemberOutput { latent_tokens })
}

/// Normalize, optionally perturb, and encode one IC frame into
/// standardized conditioning tokens (h*w, D).
fn encode_conditioning(
    ic: &FieldGrid,
    vae: &Vae,
    norm: &Normalization,
    ic_noise_std: f64,
    model: &ForecastModel,
    stream: &mut Stream,
) -> Tensor {
    let hw = ic.height * ic.width;
    let mut values = ic.values.clone();
    norm.normalize_frame(&mut values, hw);
    if ic_noise_std > 0.0 {
        for v in &mut values {
            *v += (omnicast_tensor::rng_normal(stream) * ic_noise_std) as f32;
        }
    }
    let frame = Tensor::from_vec(&[1, ic.channels, ic.height, ic.width], values);
    no_grad(|| {
        let latent = vae.encode(&frame, stream);
        let mean = latent.mean.to_vec();
        let (d, lh, lw) = (model.dims.dim, model.dims.height, model.dims.width);
        let flat = crate::tokenizer::flatten_latent(&mean, d, lh, lw);
        let std_flat: Vec<f32> = flat
            .iter()
            .map(|&v| ((v as f64 - model.latent_scale.mean) / model.latent_scale.std) as f32)
            .collect();
        Tensor::from_vec(&[lh * lw, d], std_flat)
    })
}

/// Decode latent token rows into physical-unit FieldGrids, one per frame.
fn decode_frames(
    latent_tokens: &[f32],
    model: &ForecastModel,
    vae: &Vae,
    norm: &Normalization,
    ic: &FieldGrid,
    lead_hours: &[i64],
) -> Result<Vec<FieldGrid>> {
    let dims = model.dims;
    let (d, lh, lw) = (dims.dim, dims.height, dims.width);
    let hw_tokens = dims.tokens_per_frame();
    let mut latent_batch = Vec::with_capacity(dims.frames * d * lh * lw);
    for k in 0..dims.frames {
        let rows = &latent_tokens[k * hw_tokens * d..(k + 1) * hw_tokens * d];
        latent_batch.extend(unflatten_tokens(rows, d, lh, lw));
    }
    let latent = Tensor::from_vec(&[dims.frames, d, lh, lw], latent_batch);
    let decoded = no_grad(|| vae.decode(&latent));
    let data = decoded.to_vec();
    let frame_len = ic.channels * ic.height * ic.width;
    let hw = ic.height * ic.width;
    let mut out = Vec::with_capacity(dims.frames);
    for k in 0..dims.frames {
        let mut values = data[k * frame_len..(k + 1) * frame_len].to_vec();
        norm.denormalize_frame(&mut values, hw);
        out.push(FieldGrid::new(
            values,
            ic.channels,
            ic.height,
            ic.width,
            ic.timestamp_hours + lead_hours[k],
            ic.variable_names.clone(),
            ic.grid_kind,
        )?);
    }
    Ok(out)
}

/// Joint generation: every member fills all T future frames in one
/// iterative decoding pass. Members are independent given their streams
/// and run in parallel.
pub fn generate(
    ic: &FieldGrid,
    vae: &Vae,
    model: &ForecastModel,
    norm: &Normalization,
    interval_hours: i64,
    cfg: &SamplerConfig,
    pool: &RngPool,
) -> Result<EnsembleForecast> {
    if cfg.members == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let lead_hours: Vec<i64> = (1..=model.dims.frames).map(|k| k as i64 * interval_hours).collect();
    let members: Result<Vec<MemberForecast>> = (0..cfg.members)
        .map(|m| {
            let prefix = format!("member{m}");
            let mut ic_stream = pool.stream(&format!("{prefix}/ic"));
            let conditioning = encode_conditioning(ic, vae, norm, cfg.ic_noise_std, model, &mut ic_stream);
            let tokens = decode_member_tokens(model, conditioning, cfg, pool, &prefix)?;
            let fields = decode_frames(&tokens.latent_tokens, model, vae, norm, ic, &lead_hours)?;
            Ok(MemberForecast { fields, stream_prefix: prefix })
        })
        .collect();
    Ok(EnsembleForecast {
        members: members?,
        lead_hours,
        ic_timestamp_hours: ic.timestamp_hours,
        seed: pool.seed(),
        config: cfg.clone(),
    })
}

/// Autoregressive rollout: repeated joint generation with the most recent
/// predicted frame re-encoded as the new initial condition. The horizon
/// must be a whole number of T'-frame chunks.
pub fn rollout_autoregressive(
    ic: &FieldGrid,
    vae: &Vae,
    model: &ForecastModel,
    norm: &Normalization,
    interval_hours: i64,
    cfg: &SamplerConfig,
    pool: &RngPool,
) -> Result<EnsembleForecast> {
    let horizon = cfg
        .horizon_hours
        .ok_or_else(|| Error::Config("autoregressive rollout requires horizon_hours".into()))?;
    let chunk_hours = model.dims.frames as i64 * interval_hours;
    if horizon <= 0 || horizon % chunk_hours != 0 {
        return Err(Error::Config(format!(
            "horizon {horizon}h is not a positive multiple of the chunk span {chunk_hours}h"
        )));
    }
    let recursions = (horizon / chunk_hours) as usize;
    let total_frames = recursions * model.dims.frames;
    let lead_hours: Vec<i64> = (1..=total_frames).map(|k| k as i64 * interval_hours).collect();

    let members: Result<Vec<MemberForecast>> = (0..cfg.members)
        .map(|m| {
            let mut fields: Vec<FieldGrid> = Vec::with_capacity(total_frames);
            let mut current_ic = ic.clone();
            for r in 0..recursions {
                let prefix = format!("member{m}/chunk{r}");
                let mut ic_stream = pool.stream(&format!("{prefix}/ic"));
                // Perturb only the true initial condition, not re-encoded frames.
                let noise = if r == 0 { cfg.ic_noise_std } else { 0.0 };
                let conditioning = encode_conditioning(&current_ic, vae, norm, noise, model, &mut ic_stream);
                let tokens = decode_member_tokens(model, conditioning, cfg, pool, &prefix)?;
                let chunk_leads: Vec<i64> =
                    (1..=model.dims.frames).map(|k| k as i64 * interval_hours).collect();
                let chunk = decode_frames(&tokens.latent_tokens, model, vae, norm, &current_ic, &chunk_leads)?;
                current_ic = chunk.last().expect("chunk nonempty").clone();
                fields.extend(chunk);
            }
            Ok(MemberForecast { fields, stream_prefix: format!("member{m}") })
        })
        .collect();

    Ok(EnsembleForecast {
        members: members?,
        lead_hours,
        ic_timestamp_hours: ic.timestamp_hours,
        seed: pool.seed(),
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_table_n100_k4() {
        // remaining: [92, 71, 38, 0] -> counts [8, 21, 33, 38]
        assert_eq!(unmask_counts(100, 4).unwrap(), vec![8, 21, 33, 38]);
    }

    #[test]
    fn single_iteration_reveals_all() {
        assert_eq!(unmask_counts(77, 1).unwrap(), vec![77]);
    }

    #[test]
    fn k_equals_n_gives_all_ones() {
        let counts = unmask_counts(40, 40).unwrap();
        assert_eq!(counts, vec![1; 40]);
    }

    #[test]
    fn counts_sum_and_positive_property() {
        for (n, k) in [(100, 4), (5632, 44), (17, 5), (1024, 8), (50, 49)] {
            let counts = unmask_counts(n, k).unwrap();
            assert_eq!(counts.len(), k);
            assert_eq!(counts.iter().sum::<usize>(), n, "sum mismatch for N={n} K={k}");
            assert!(counts.iter().all(|&c| c >= 1), "zero count for N={n} K={k}: {counts:?}");
        }
    }

    #[test]
    fn k_larger_than_n_rejected() {
        assert!(unmask_counts(3, 4).is_err());
    }

    #[test]
    fn autoregressive_framewise_order_is_increasing() {
        let pool = RngPool::new(61);
        let mut stream = pool.stream("o");
        let hw = 4;
        let mut masked: Vec<usize> = (0..12).collect(); // 3 frames
        let mut seen = Vec::new();
        while !masked.is_empty() {
            let sel = pick_positions(&masked, UnmaskOrder::AutoregressiveFramewise, 0, hw, &mut stream);
            assert_eq!(sel.len(), hw);
            seen.push(sel[0] / hw);
            masked.retain(|i| !sel.contains(i));
        }
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn random_pick_full_count_returns_everything() {
        let pool = RngPool::new(62);
        let mut stream = pool.stream("o");
        let masked: Vec<usize> = vec![3, 5, 9, 11];
        let mut sel = pick_positions(&masked, UnmaskOrder::Random, 4, 4, &mut stream);
        sel.sort_unstable();
        assert_eq!(sel, masked);
    }

    #[test]
    fn random_framewise_orders_uniform_over_permutations() {
        // T = 3: all 6 frame orders observed with roughly equal frequency.
        let pool = RngPool::new(63);
        let hw = 2;
        let draws = 1000;
        let mut counts = std::collections::HashMap::new();
        for rep in 0..draws {
            let mut stream = pool.substream("o", rep);
            let mut masked: Vec<usize> = (0..6).collect();
            let mut order = Vec::new();
            while !masked.is_empty() {
                let sel = pick_positions(&masked, UnmaskOrder::RandomFramewise, 0, hw, &mut stream);
                order.push(sel[0] / hw);
                masked.retain(|i| !sel.contains(i));
            }
            *counts.entry(order).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6, "not all frame orders observed: {counts:?}");
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected) * (c as f64 - expected) / expected)
            .sum();
        // 5 degrees of freedom; 0.999 quantile ~ 20.5
        assert!(chi2 < 20.5, "chi-square {chi2}: {counts:?}");
    }
}
