//! Gridded multi-channel fields and per-variable normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Periodic,
    LatLon,
}

/// One time-stamped weather state of shape (V, H, W), row-major.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub values: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub timestamp_hours: i64,
    pub variable_names: Vec<String>,
    pub grid_kind: GridKind,
}

impl FieldGrid {
    pub fn new(
        values: Vec<f32>,
        channels: usize,
        height: usize,
        width: usize,
        timestamp_hours: i64,
        variable_names: Vec<String>,
        grid_kind: GridKind,
    ) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Input(format!(
                "field data length {} does not match {}x{}x{}",
                values.len(),
                channels,
                height,
                width
            )));
        }
        if variable_names.len() != channels {
            return Err(Error::Input(format!(
                "{} variable names for {} channels",
                variable_names.len(),
                channels
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("field contains non-finite values".into()));
        }
        Ok(FieldGrid { values, channels, height, width, timestamp_hours, variable_names, grid_kind })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.values[c * hw..(c + 1) * hw]
    }
}

/// Per-variable normalization statistics, computed from the training split
/// only and applied to every split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VarStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Normalization {
    pub per_var: Vec<VarStats>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl Normalization {
    /// Mean/std per channel over frames laid out as (frames, V, H, W).
    /// Zero-variance channels get a floored std and a warning on stderr.
    pub fn compute(frames: &[f32], channels: usize, hw: usize, names: &[String]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Input("cannot compute normalization from an empty split".into()));
        }
        let frame_len = channels * hw;
        assert_eq!(frames.len() % frame_len, 0);
        let n_frames = frames.len() / frame_len;
        let count = (n_frames * hw) as f64;
        let mut per_var = Vec::with_capacity(channels);
        for c in 0..channels {
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            for f in 0..n_frames {
                let base = f * frame_len + c * hw;
                for &v in &frames[base..base + hw] {
                    let v = v as f64;
                    sum += v;
                    sumsq += v * v;
                }
            }
            let mean = sum / count;
            let var = (sumsq / count - mean * mean).max(0.0);
            let mut std = var.sqrt();
            if std < STD_FLOOR {
                eprintln!(
                    "warning: variable `{}` has near-zero variance; std floored at {STD_FLOOR}",
                    names[c]
                );
                std = STD_FLOOR;
            }
            per_var.push(VarStats { name: names[c].clone(), mean, std });
        }
        Ok(Normalization { per_var })
    }

    /// Normalize one (V, H, W) frame in place.
    pub fn normalize_frame(&self, values: &mut [f32], hw: usize) {
        for (c, stats) in self.per_var.iter().enumerate() {
            for v in &mut values[c * hw..(c + 1) * hw] {
                *v = ((*v as f64 - stats.mean) / stats.std) as f32;
            }
        }
    }

    /// Invert normalization on one (V, H, W) frame in place.
    pub fn denormalize_frame(&self, values: &mut [f32], hw: usize) {
        for (c, stats) in self.per_var.iter().enumerate() {
            for v in &mut values[c * hw..(c + 1) * hw] {
                *v = (*v as f64 * stats.std + stats.mean) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_train_split_is_standard() {
        // 3 frames, 2 channels, 4 pixels
        let frames: Vec<f32> = (0..24).map(|i| (i as f32) * 0.5 + 1.0).collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let norm = Normalization::compute(&frames, 2, 4, &names).unwrap();
        let mut data = frames.clone();
        for f in 0..3 {
            norm.normalize_frame(&mut data[f * 8..(f + 1) * 8], 4);
        }
        for c in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|f| data[f * 8 + c * 4..f * 8 + (c + 1) * 4].iter().map(|&v| v as f64).collect::<Vec<_>>())
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {c} std {}", var.sqrt());
        }
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let frames = vec![3.5f32; 8];
        let names = vec!["c".to_string()];
        let norm = Normalization::compute(&frames, 1, 4, &names).unwrap();
        assert_eq!(norm.per_var[0].std, STD_FLOOR);
        let mut data = frames;
        norm.normalize_frame(&mut data[..8], 4);
        // 2 frames of 4 pixels each; hw=4 normalizes first frame only above,
        // so normalize the second too
        norm.normalize_frame(&mut data.clone()[4..8], 4);
        assert!(data[..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_split_rejected() {
        assert!(Normalization::compute(&[], 1, 4, &["x".into()]).is_err());
    }
}
