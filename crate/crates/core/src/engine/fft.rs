//! Small 2D FFT helpers on row-major complex buffers.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// In-place unnormalized 2D FFT (forward or inverse) of an `h x w` row-major
/// complex buffer. Rows first, then columns through a scratch column.
fn fft2_in_place(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), h * w);
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };

    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Unnormalized forward 2D DFT.
pub fn fft2_forward(buf: &mut [Complex<f64>], h: usize, w: usize) {
    fft2_in_place(buf, h, w, false);
}

/// Unnormalized inverse 2D DFT (forward followed by inverse scales by `h*w`).
pub fn fft2_inverse(buf: &mut [Complex<f64>], h: usize, w: usize) {
    fft2_in_place(buf, h, w, true);
}
