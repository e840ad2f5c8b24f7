//! Synthetic geophysical dataset generation, OCTF ingestion, normalization,
//! and time-based splits.

pub mod field;
pub mod manifest;
pub mod synthetic;

pub use field::{FieldGrid, GridKind, Normalization, VarStats};
pub use manifest::{DatasetManifest, FieldDataset, FrameRange, ShardEntry};
pub use synthetic::{SyntheticConfig, SyntheticSystem};

use std::path::Path;

use omnicast_tensor::octf;

use crate::error::{Error, Result};

/// Generate the synthetic dataset into `dir`: one OCTF shard per year,
/// climatology tensors, and the manifest (with normalization statistics
/// from the training split only). Bit-reproducible for a fixed seed.
pub fn gen_synthetic(cfg: &SyntheticConfig, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut system = SyntheticSystem::new(cfg, seed)?;
    let frame_len = cfg.channels * cfg.height * cfg.width;
    let mut files = Vec::with_capacity(cfg.years);
    let mut train_frames: Vec<f32> = Vec::new();
    let train_end = cfg.train_years * cfg.frames_per_year;

    for year in 0..cfg.years {
        let mut shard = Vec::with_capacity(cfg.frames_per_year * frame_len);
        for _ in 0..cfg.frames_per_year {
            let frame = system.step();
            if (year * cfg.frames_per_year) < train_end {
                train_frames.extend_from_slice(&frame);
            }
            shard.extend_from_slice(&frame);
        }
        let name = format!("year_{year:03}.octf");
        let path = dir.join(&name);
        octf::write_octf(
            &path,
            &[cfg.frames_per_year, cfg.channels, cfg.height, cfg.width],
            &shard,
        )
        .map_err(|e| Error::octf(&path, e))?;
        files.push(ShardEntry {
            path: name,
            first_frame: year * cfg.frames_per_year,
            frames: cfg.frames_per_year,
            sha256: manifest::sha256_file(&path)?,
        });
    }

    let names = cfg.variable_names();
    let normalization =
        Normalization::compute(&train_frames, cfg.channels, cfg.height * cfg.width, &names)?;

    let train = FrameRange { start: 0, end: train_end };
    let val = FrameRange { start: train_end, end: train_end + cfg.val_years * cfg.frames_per_year };
    let test = FrameRange { start: val.end, end: cfg.total_frames() };
    let manifest = DatasetManifest {
        grid_kind: GridKind::Periodic,
        channels: cfg.channels,
        height: cfg.height,
        width: cfg.width,
        variables: names,
        frame_interval_hours: cfg.frame_interval_hours,
        start_timestamp_hours: 0,
        files,
        train,
        val,
        test,
        normalization,
    };
    manifest.validate()?;

    // Per-pixel climatology of the training split, for baselines and
    // stability checks.
    let n_train = train.len();
    let mut mean = vec![0.0f64; frame_len];
    let mut sq = vec![0.0f64; frame_len];
    for f in 0..n_train {
        for (j, &v) in train_frames[f * frame_len..(f + 1) * frame_len].iter().enumerate() {
            mean[j] += v as f64;
            sq[j] += (v as f64) * (v as f64);
        }
    }
    let mut std = vec![0.0f64; frame_len];
    for j in 0..frame_len {
        mean[j] /= n_train as f64;
        std[j] = (sq[j] / n_train as f64 - mean[j] * mean[j]).max(0.0).sqrt();
    }
    let shape = [cfg.channels, cfg.height, cfg.width];
    let mean32: Vec<f32> = mean.iter().map(|&v| v as f32).collect();
    let std32: Vec<f32> = std.iter().map(|&v| v as f32).collect();
    let mean_path = dir.join(manifest::CLIM_MEAN_NAME);
    octf::write_octf(&mean_path, &shape, &mean32).map_err(|e| Error::octf(&mean_path, e))?;
    let std_path = dir.join(manifest::CLIM_STD_NAME);
    octf::write_octf(&std_path, &shape, &std32).map_err(|e| Error::octf(&std_path, e))?;

    manifest.save(dir)?;
    Ok(manifest)
}
