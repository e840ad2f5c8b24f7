//! 2-D discrete Fourier transforms (f64), used by the spectral metrics.

pub use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Forward 2-D DFT of a real (h, w) field, row-major. Unnormalized
/// (standard DFT convention).
pub fn fft2(field: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    assert_eq!(field.len(), h * w, "field length does not match h*w");
    let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_complex(&mut data, h, w, false);
    data
}

/// Inverse 2-D DFT, normalized by 1/(h·w) so that ifft2(fft2(x)) == x.
pub fn ifft2(spectrum: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    assert_eq!(spectrum.len(), h * w, "spectrum length does not match h*w");
    let mut data = spectrum.to_vec();
    fft2_complex(&mut data, h, w, true);
    let norm = 1.0 / (h * w) as f64;
    for v in &mut data {
        *v *= norm;
    }
    data
}

fn fft2_complex(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
}
