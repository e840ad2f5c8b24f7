//! Multi-scale structural similarity with a Gaussian window.
//!
//! Standard constants K1 = 0.01, K2 = 0.03, 11-point Gaussian window with
//! sigma 1.5, and the usual 5-scale exponents (renormalized when the field
//! supports fewer dyadic scales). The dynamic range comes from the truth
//! field. The coarsest scale's full SSIM term carries the sign, so an
//! anti-correlated prediction scores negative.

use crate::error::{Error, Result};

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn gaussian_kernel() -> Vec<f64> {
    let mut k = Vec::with_capacity(WINDOW);
    let c = (WINDOW / 2) as f64;
    for i in 0..WINDOW {
        let d = i as f64 - c;
        k.push((-d * d / (2.0 * SIGMA * SIGMA)).exp());
    }
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable valid-mode Gaussian filter.
fn gaussian_filter(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let kernel = gaussian_kernel();
    let oh = h - WINDOW + 1;
    let ow = w - WINDOW + 1;
    // rows
    let mut tmp = vec![0.0f64; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * x[y * w + x0 + i];
            }
            tmp[y * ow + x0] = acc;
        }
    }
    // columns
    let mut out = vec![0.0f64; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(y0 + i) * ow + x0];
            }
            out[y0 * ow + x0] = acc;
        }
    }
    (out, oh, ow)
}

/// Mean luminance and contrast-structure terms at one scale.
fn ssim_components(pred: &[f64], truth: &[f64], h: usize, w: usize, range: f64) -> (f64, f64) {
    let c1 = (K1 * range) * (K1 * range);
    let c2 = (K2 * range) * (K2 * range);
    let (mu_p, oh, ow) = gaussian_filter(pred, h, w);
    let (mu_t, _, _) = gaussian_filter(truth, h, w);
    let pp: Vec<f64> = pred.iter().map(|&v| v * v).collect();
    let tt: Vec<f64> = truth.iter().map(|&v| v * v).collect();
    let pt: Vec<f64> = pred.iter().zip(truth).map(|(&p, &t)| p * t).collect();
    let (e_pp, _, _) = gaussian_filter(&pp, h, w);
    let (e_tt, _, _) = gaussian_filter(&tt, h, w);
    let (e_pt, _, _) = gaussian_filter(&pt, h, w);

    let mut lum = 0.0;
    let mut cs = 0.0;
    let n = (oh * ow) as f64;
    for i in 0..oh * ow {
        let (mp, mt) = (mu_p[i], mu_t[i]);
        let var_p = (e_pp[i] - mp * mp).max(0.0);
        let var_t = (e_tt[i] - mt * mt).max(0.0);
        let cov = e_pt[i] - mp * mt;
        lum += (2.0 * mp * mt + c1) / (mp * mp + mt * mt + c1);
        cs += (2.0 * cov + c2) / (var_p + var_t + c2);
    }
    (lum / n, cs / n)
}

fn downsample_2x(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let nh = h / 2;
    let nw = w / 2;
    let mut out = vec![0.0f64; nh * nw];
    for y in 0..nh {
        for xx in 0..nw {
            out[y * nw + xx] = 0.25
                * (x[2 * y * w + 2 * xx]
                    + x[2 * y * w + 2 * xx + 1]
                    + x[(2 * y + 1) * w + 2 * xx]
                    + x[(2 * y + 1) * w + 2 * xx + 1]);
        }
    }
    (out, nh, nw)
}

/// MS-SSIM in [-1, 1]; 1 means identical fields.
pub fn ms_ssim(pred: &[f64], truth: &[f64], h: usize, w: usize) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != h * w {
        return Err(Error::Input("ms_ssim shape mismatch".into()));
    }
    if h < WINDOW || w < WINDOW {
        return Err(Error::Input(format!(
            "field {h}x{w} smaller than the {WINDOW}-point SSIM window"
        )));
    }
    // Number of dyadic scales the field supports, at most 5.
    let mut scales = 1usize;
    let (mut sh, mut sw) = (h, w);
    while scales < SCALE_WEIGHTS.len() && sh / 2 >= WINDOW && sw / 2 >= WINDOW {
        scales += 1;
        sh /= 2;
        sw /= 2;
    }
    let weight_sum: f64 = SCALE_WEIGHTS[..scales].iter().sum();

    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for &v in truth {
        t_min = t_min.min(v);
        t_max = t_max.max(v);
    }
    let range = (t_max - t_min).max(1e-8);

    let mut p = pred.to_vec();
    let mut t = truth.to_vec();
    let (mut ch, mut cw) = (h, w);
    let mut magnitude = 1.0f64;
    let mut sign = 1.0f64;
    for scale in 0..scales {
        let (lum, cs) = ssim_components(&p, &t, ch, cw, range);
        let weight = SCALE_WEIGHTS[scale] / weight_sum;
        if scale + 1 < scales {
            magnitude *= cs.abs().min(1.0).powf(weight);
            let (pn, nh, nw) = downsample_2x(&p, ch, cw);
            let (tn, _, _) = downsample_2x(&t, ch, cw);
            p = pn;
            t = tn;
            ch = nh;
            cw = nw;
        } else {
            // Luminance contributes as a nonnegative similarity; the signed
            // contrast-structure term carries anti-correlation, so an
            // inverted field scores negative instead of spuriously positive.
            let full = lum.clamp(0.0, 1.0) * cs;
            sign = full.signum();
            magnitude *= full.abs().min(1.0).powf(weight);
        }
    }
    Ok(sign * magnitude)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wavy_field(h: usize, w: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                out.push(
                    (2.0 * std::f64::consts::PI * x as f64 / 16.0).sin()
                        + 0.5 * (2.0 * std::f64::consts::PI * y as f64 / 8.0).cos(),
                );
            }
        }
        out
    }

    #[test]
    fn identical_fields_score_one() {
        let f = wavy_field(32, 64);
        let s = ms_ssim(&f, &f, 32, 64).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "ms_ssim(x, x) = {s}");
    }

    #[test]
    fn inverted_field_scores_negative() {
        let f = wavy_field(32, 64);
        let neg: Vec<f64> = f.iter().map(|&v| -v).collect();
        let s = ms_ssim(&neg, &f, 32, 64).unwrap();
        assert!(s < 0.0, "anti-correlated field must score negative, got {s}");
    }

    #[test]
    fn score_decreases_with_noise() {
        let f = wavy_field(32, 64);
        let mut prev = 1.1;
        for (i, noise_std) in [0.01, 0.1, 1.0].iter().enumerate() {
            let noisy: Vec<f64> = f
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    // Cheap deterministic pseudo-noise.
                    let u = (((j * 2654435761 + i * 97) % 10007) as f64 / 10007.0) - 0.5;
                    v + noise_std * u * 3.46
                })
                .collect();
            let s = ms_ssim(&noisy, &f, 32, 64).unwrap();
            assert!(s < prev, "score must decrease with noise: {s} !< {prev}");
            prev = s;
        }
    }

    #[test]
    fn too_small_field_rejected() {
        let f = vec![0.0; 8 * 8];
        assert!(ms_ssim(&f, &f, 8, 8).is_err());
    }
}
