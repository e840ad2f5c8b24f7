//! Dataset manifests: shard files, time axis, splits, normalization.
//!
//! Field data lives in OCTF shards of shape (frames, V, H, W); the manifest
//! is a JSON document binding shards to the time axis, declaring the
//! train/val/test split by frame range, and carrying the normalization
//! statistics computed from the training split.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use omnicast_tensor::octf;

use crate::data::field::{FieldGrid, GridKind, Normalization};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardEntry {
    pub path: String,
    /// Frame index of the shard's first frame.
    pub first_frame: usize,
    pub frames: usize,
    /// SHA-256 of the shard file, hex.
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct FrameRange {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl FrameRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid_kind: GridKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub variables: Vec<String>,
    pub frame_interval_hours: i64,
    pub start_timestamp_hours: i64,
    pub files: Vec<ShardEntry>,
    pub train: FrameRange,
    pub val: FrameRange,
    pub test: FrameRange,
    pub normalization: Normalization,
}

pub const MANIFEST_NAME: &str = "manifest.json";
pub const CLIM_MEAN_NAME: &str = "climatology_mean.octf";
pub const CLIM_STD_NAME: &str = "climatology_std.octf";

impl DatasetManifest {
    pub fn total_frames(&self) -> usize {
        self.files.iter().map(|f| f.frames).sum()
    }

    pub fn timestamp_of(&self, frame: usize) -> i64 {
        self.start_timestamp_hours + frame as i64 * self.frame_interval_hours
    }

    /// Structural validation: contiguous, ordered shards and ordered,
    /// disjoint splits (train < val < test).
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0usize;
        for entry in &self.files {
            if entry.first_frame != expected {
                return Err(Error::Input(format!(
                    "shard `{}` out of order: first_frame {} but expected {}",
                    entry.path, entry.first_frame, expected
                )));
            }
            expected += entry.frames;
        }
        let total = expected;
        let ranges = [("train", self.train), ("val", self.val), ("test", self.test)];
        let mut cursor = 0usize;
        for (name, r) in ranges {
            if r.start != cursor {
                return Err(Error::Input(format!(
                    "{name} split must start at frame {cursor}, got {}",
                    r.start
                )));
            }
            if r.end < r.start {
                return Err(Error::Input(format!("{name} split is reversed")));
            }
            cursor = r.end;
        }
        if cursor != total {
            return Err(Error::Input(format!(
                "splits cover {cursor} frames but dataset has {total}"
            )));
        }
        if self.variables.len() != self.channels {
            return Err(Error::Input("variable count does not match channel count".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&body).map_err(|e| Error::json(&path, e))?;
        manifest.validate()?;
        Ok(manifest)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    use std::io::Read;
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// In-memory dataset: the full (frames, V, H, W) array plus the manifest.
pub struct FieldDataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<f32>,
    pub dir: PathBuf,
}

impl FieldDataset {
    /// Load every shard, verifying per-file checksums and shapes. A
    /// mismatch names the offending file.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        let frame_len = manifest.channels * manifest.height * manifest.width;
        let mut frames = Vec::with_capacity(manifest.total_frames() * frame_len);
        for entry in &manifest.files {
            let path = dir.join(&entry.path);
            let digest = sha256_file(&path)?;
            if digest != entry.sha256 {
                return Err(Error::Input(format!(
                    "checksum mismatch for `{}`: manifest {}, file {digest}",
                    entry.path, entry.sha256
                )));
            }
            let (shape, data) = octf::read_octf::<f32>(&path).map_err(|e| Error::octf(&path, e))?;
            let expect = [entry.frames, manifest.channels, manifest.height, manifest.width];
            if shape != expect {
                return Err(Error::Input(format!(
                    "shape mismatch for `{}`: file {:?}, manifest {:?}",
                    entry.path, shape, expect
                )));
            }
            frames.extend_from_slice(&data);
        }
        Ok(FieldDataset { manifest, frames, dir: dir.to_path_buf() })
    }

    pub fn frame_len(&self) -> usize {
        self.manifest.channels * self.manifest.height * self.manifest.width
    }

    pub fn frame_raw(&self, idx: usize) -> &[f32] {
        let fl = self.frame_len();
        &self.frames[idx * fl..(idx + 1) * fl]
    }

    /// Frames in `range` as FieldGrids, in timestamp order.
    pub fn load_fields(&self, range: FrameRange) -> Result<Vec<FieldGrid>> {
        if range.end > self.manifest.total_frames() {
            return Err(Error::Input(format!(
                "frame range [{}, {}) exceeds dataset length {}",
                range.start,
                range.end,
                self.manifest.total_frames()
            )));
        }
        let mut out = Vec::with_capacity(range.len());
        for idx in range.start..range.end {
            out.push(FieldGrid::new(
                self.frame_raw(idx).to_vec(),
                self.manifest.channels,
                self.manifest.height,
                self.manifest.width,
                self.manifest.timestamp_of(idx),
                self.manifest.variables.clone(),
                self.manifest.grid_kind,
            )?);
        }
        Ok(out)
    }

    /// Per-channel-per-pixel mean over the training split (the trivial
    /// climatological baseline forecast).
    pub fn climatology_mean(&self) -> Vec<f64> {
        self.climatology().0
    }

    /// (mean, std) per channel-pixel over the training split.
    pub fn climatology(&self) -> (Vec<f64>, Vec<f64>) {
        let fl = self.frame_len();
        let n = self.manifest.train.len();
        let mut mean = vec![0.0f64; fl];
        let mut sq = vec![0.0f64; fl];
        for idx in self.manifest.train.start..self.manifest.train.end {
            for (j, &v) in self.frame_raw(idx).iter().enumerate() {
                mean[j] += v as f64;
                sq[j] += (v as f64) * (v as f64);
            }
        }
        for j in 0..fl {
            mean[j] /= n as f64;
            sq[j] = (sq[j] / n as f64 - mean[j] * mean[j]).max(0.0).sqrt();
        }
        (mean, sq)
    }
}
