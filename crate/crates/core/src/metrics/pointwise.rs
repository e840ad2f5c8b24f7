//! Grid weights and pointwise deterministic metrics.

use crate::data::GridKind;
use crate::error::{Error, Result};

/// Normalized nonnegative area weights over an (h, w) grid.
#[derive(Debug, Clone)]
pub struct GridWeights {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingMode {
    Uniform,
    CosineLatitude,
}

impl GridWeights {
    pub fn uniform(height: usize, width: usize) -> Self {
        let n = height * width;
        GridWeights { values: vec![1.0 / n as f64; n], height, width }
    }

    /// cos(latitude) weights for a regular lat/lon grid with rows spanning
    /// 90..-90 degrees at cell centers.
    pub fn cosine_latitude(height: usize, width: usize) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for row in 0..height {
            let lat = 90.0 - (row as f64 + 0.5) * 180.0 / height as f64;
            let w = lat.to_radians().cos().max(0.0);
            values.extend(std::iter::repeat(w).take(width));
        }
        let total: f64 = values.iter().sum();
        for v in &mut values {
            *v /= total;
        }
        GridWeights { values, height, width }
    }

    pub fn for_mode(mode: WeightingMode, height: usize, width: usize) -> Self {
        match mode {
            WeightingMode::Uniform => Self::uniform(height, width),
            WeightingMode::CosineLatitude => Self::cosine_latitude(height, width),
        }
    }

    /// Default weighting for a grid kind: uniform on the doubly periodic
    /// synthetic grid, cosine-latitude on lat/lon grids.
    pub fn default_mode(kind: GridKind) -> WeightingMode {
        match kind {
            GridKind::Periodic => WeightingMode::Uniform,
            GridKind::LatLon => WeightingMode::CosineLatitude,
        }
    }
}

fn check_shapes(pred: &[f64], truth: &[f64], weights: &GridWeights) -> Result<()> {
    if pred.len() != truth.len() || pred.len() != weights.values.len() {
        return Err(Error::Input(format!(
            "metric shape mismatch: pred {}, truth {}, weights {}",
            pred.len(),
            truth.len(),
            weights.values.len()
        )));
    }
    Ok(())
}

/// sqrt(sum w (p - o)^2) with normalized weights.
pub fn rmse(pred: &[f64], truth: &[f64], weights: &GridWeights) -> Result<f64> {
    check_shapes(pred, truth, weights)?;
    let mut acc = 0.0;
    for ((&p, &o), &w) in pred.iter().zip(truth).zip(&weights.values) {
        acc += w * (p - o) * (p - o);
    }
    Ok(acc.sqrt())
}

/// |sum w (p - o)|: magnitude of the weighted mean error.
pub fn abs_bias(pred: &[f64], truth: &[f64], weights: &GridWeights) -> Result<f64> {
    check_shapes(pred, truth, weights)?;
    let mut acc = 0.0;
    for ((&p, &o), &w) in pred.iter().zip(truth).zip(&weights.values) {
        acc += w * (p - o);
    }
    Ok(acc.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_zeroes() {
        let w = GridWeights::uniform(2, 2);
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(rmse(&x, &x, &w).unwrap(), 0.0);
        assert_eq!(abs_bias(&x, &x, &w).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let w = GridWeights::uniform(2, 2);
        let o = vec![1.0, 2.0, 3.0, 4.0];
        let p: Vec<f64> = o.iter().map(|v| v + 0.5).collect();
        assert!((rmse(&p, &o, &w).unwrap() - 0.5).abs() < 1e-12);
        assert!((abs_bias(&p, &o, &w).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bias_cancellation() {
        let w = GridWeights::uniform(1, 2);
        let p = vec![1.0, -1.0];
        let o = vec![0.0, 0.0];
        assert!((rmse(&p, &o, &w).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(abs_bias(&p, &o, &w).unwrap(), 0.0);
    }

    #[test]
    fn permutation_invariance() {
        let w = GridWeights::uniform(1, 4);
        let p = vec![1.0, 2.0, 3.0, 4.0];
        let o = vec![0.5, 1.5, 2.0, 3.0];
        let perm = [2usize, 0, 3, 1];
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let op: Vec<f64> = perm.iter().map(|&i| o[i]).collect();
        assert!((rmse(&p, &o, &w).unwrap() - rmse(&pp, &op, &w).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cosine_latitude_weights_normalized_and_polar_light() {
        let w = GridWeights::cosine_latitude(8, 4);
        let sum: f64 = w.values.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Poleward rows weigh less than equatorial rows.
        assert!(w.values[0] < w.values[4 * 4]);
    }
}
