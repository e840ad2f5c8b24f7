//! Power spectra and the spectral divergence/residual metrics.

use omnicast_tensor::fft::fft2;

use crate::error::{Error, Result};

pub const SPECTRUM_FLOOR: f64 = 1e-12;

/// Azimuthally averaged power spectrum: squared DFT magnitudes averaged
/// into integer-wavenumber bins k = round(|k_vec|), bin value = mean power
/// per mode in the bin. Normalized by the number of grid points.
pub fn power_spectrum(field: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    if field.len() != h * w {
        return Err(Error::Input("power_spectrum shape mismatch".into()));
    }
    let spec = fft2(field, h, w);
    let norm = 1.0 / (h * w) as f64;
    let kmax = (((h / 2) * (h / 2) + (w / 2) * (w / 2)) as f64).sqrt().round() as usize;
    let mut power = vec![0.0f64; kmax + 1];
    let mut counts = vec![0usize; kmax + 1];
    for ky in 0..h {
        let fy = if ky <= h / 2 { ky as f64 } else { ky as f64 - h as f64 };
        for kx in 0..w {
            let fx = if kx <= w / 2 { kx as f64 } else { kx as f64 - w as f64 };
            let k = (fx * fx + fy * fy).sqrt().round() as usize;
            let v = spec[ky * w + kx];
            power[k] += (v.re * v.re + v.im * v.im) * norm;
            counts[k] += 1;
        }
    }
    for (p, &c) in power.iter_mut().zip(&counts) {
        if c > 0 {
            *p /= c as f64;
        }
    }
    Ok(power)
}

/// Spectral divergence: sum_k p_k log(p_k / q_k) with p the truth spectrum
/// and q the prediction spectrum, both floored and normalized to sum 1.
pub fn sdiv(pred: &[f64], truth: &[f64], h: usize, w: usize) -> Result<f64> {
    let sp = power_spectrum(pred, h, w)?;
    let st = power_spectrum(truth, h, w)?;
    Ok(sdiv_from_spectra(&sp, &st))
}

pub fn sdiv_from_spectra(pred_spectrum: &[f64], truth_spectrum: &[f64]) -> f64 {
    let floor = |s: &[f64]| -> Vec<f64> {
        let v: Vec<f64> = s.iter().map(|&x| x.max(0.0) + SPECTRUM_FLOOR).collect();
        let total: f64 = v.iter().sum();
        v.into_iter().map(|x| x / total).collect()
    };
    let q = floor(pred_spectrum);
    let p = floor(truth_spectrum);
    p.iter().zip(&q).map(|(&pv, &qv)| pv * (pv / qv).ln()).sum()
}

/// Spectral residual: mean relative power error over the upper half of the
/// wavenumber range.
pub fn sres(pred: &[f64], truth: &[f64], h: usize, w: usize) -> Result<f64> {
    let sp = power_spectrum(pred, h, w)?;
    let st = power_spectrum(truth, h, w)?;
    Ok(sres_from_spectra(&sp, &st))
}

pub fn sres_from_spectra(pred_spectrum: &[f64], truth_spectrum: &[f64]) -> f64 {
    let k = pred_spectrum.len();
    let start = k / 2;
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in start..k {
        let t = truth_spectrum[i].max(SPECTRUM_FLOOR);
        acc += (pred_spectrum[i] - truth_spectrum[i]).abs() / t;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}
