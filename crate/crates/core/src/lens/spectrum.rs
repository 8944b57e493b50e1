//! Fourier-space image parameterization: half-spectrum coefficients with
//! per-frequency energy scaling, plus the color decorrelation matrix applied
//! at decode time.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;

use crate::engine::{fft2_forward, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Image parameterized by the half-spectrum of a real 2D signal, one plane
/// pair (real, imaginary) per channel, stored `[C, 2, H, W/2+1]`.
///
/// The stored coefficients are multiplied by a per-frequency scale at decode
/// time, chosen as `1 / max(sqrt(fx^2 + fy^2), 1/max(h, w))` so every
/// frequency carries the same energy and the DC term is clamped to the
/// lowest nonzero frequency's scale.
#[derive(Debug, Clone)]
pub struct SpectrumImage {
    params: Vec<f64>,
    channels: usize,
    height: usize,
    width: usize,
    scales: Vec<f64>,
}

impl SpectrumImage {
    pub fn half_width(&self) -> usize {
        self.width / 2 + 1
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn param_shape(&self) -> Vec<usize> {
        vec![self.channels, 2, self.height, self.half_width()]
    }

    /// Record the decode on a graph: spectrum -> spatial image, channel
    /// mixing by the color matrix, then a sigmoid onto `[0, 1]`. Returns
    /// `(params leaf, decoded image node)`.
    pub fn decode_on(&self, graph: &mut Graph, color: &ColorMatrix) -> Result<(NodeId, NodeId)> {
        if color.channels() != self.channels {
            return Err(Error::Shape {
                context: "decode".into(),
                detail: format!(
                    "color matrix is {}x{} but spectrum has {} channels",
                    color.channels(),
                    color.channels(),
                    self.channels
                ),
            });
        }
        let leaf = graph.leaf_raw(self.params.clone(), self.param_shape());
        let spatial = graph.spectrum_decode(leaf, &self.scales, self.height, self.width, "decode")?;
        let mixed = graph.color_mix(spatial, color.matrix(), "decode")?;
        let image = graph.sigmoid(mixed);
        Ok((leaf, image))
    }

    /// Decode without recording: the final image in `[0, 1]`, `[1, C, H, W]`.
    pub fn decode(&self, color: &ColorMatrix) -> Result<Tensor> {
        let mut graph = Graph::new();
        let (_, image) = self.decode_on(&mut graph, color)?;
        Tensor::new(graph.shape(image).to_vec(), graph.data(image).to_vec())
    }
}

/// Frequency scale table for an `h x w` image, row-major `[h][w/2+1]`.
fn frequency_scales(h: usize, w: usize) -> Vec<f64> {
    let wh = w / 2 + 1;
    let lowest = 1.0 / h.max(w) as f64;
    let mut scales = Vec::with_capacity(h * wh);
    for v in 0..h {
        let fy = if v <= h / 2 { v as f64 / h as f64 } else { (v as f64 - h as f64) / h as f64 };
        for u in 0..wh {
            let fx = u as f64 / w as f64;
            let f = (fx * fx + fy * fy).sqrt();
            scales.push(1.0 / f.max(lowest));
        }
    }
    scales
}

/// Initialize spectrum coefficients from a small-variance Gaussian
/// (standard deviation 0.01), seeded.
pub fn fourier_param_init(
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<SpectrumImage> {
    if height < 8 || width < 8 {
        return Err(Error::InvalidArgument(format!(
            "spectrum dimensions must be >= 8, got {height}x{width}"
        )));
    }
    if channels == 0 {
        return Err(Error::InvalidArgument("spectrum needs at least one channel".into()));
    }
    let wh = width / 2 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<f64> = (0..channels * 2 * height * wh)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.01)
        .collect();
    Ok(SpectrumImage { params, channels, height, width, scales: frequency_scales(height, width) })
}

/// A zero spectrum (decodes to mid-gray after the sigmoid).
pub fn zero_spectrum(height: usize, width: usize, channels: usize) -> Result<SpectrumImage> {
    let mut s = fourier_param_init(height, width, channels, 0)?;
    s.params_mut().fill(0.0);
    Ok(s)
}

/// Encode a spatial `[C, H, W]` image into spectrum coefficients such that
/// decoding the raw spatial signal reproduces the image: the forward DFT
/// divided elementwise by the frequency scales.
pub fn encode(image: &[f64], channels: usize, height: usize, width: usize) -> Result<SpectrumImage> {
    if image.len() != channels * height * width {
        return Err(Error::Shape {
            context: "encode".into(),
            detail: format!("{} values != {channels} x {height} x {width}", image.len()),
        });
    }
    let wh = width / 2 + 1;
    let scales = frequency_scales(height, width);
    let mut params = vec![0.0; channels * 2 * height * wh];
    let mut grid = vec![Complex::new(0.0, 0.0); height * width];
    for ch in 0..channels {
        let src = &image[ch * height * width..][..height * width];
        for (cell, &v) in grid.iter_mut().zip(src) {
            *cell = Complex::new(v, 0.0);
        }
        fft2_forward(&mut grid, height, width);
        let re = mut_slice(&mut params, (ch * 2) * height * wh, height * wh);
        for v in 0..height {
            for u in 0..wh {
                re[v * wh + u] = grid[v * width + u].re / scales[v * wh + u];
            }
        }
        let im = mut_slice(&mut params, (ch * 2 + 1) * height * wh, height * wh);
        for v in 0..height {
            for u in 0..wh {
                im[v * wh + u] = grid[v * width + u].im / scales[v * wh + u];
            }
        }
    }
    Ok(SpectrumImage { params, channels, height, width, scales })
}

fn mut_slice(v: &mut [f64], start: usize, len: usize) -> &mut [f64] {
    &mut v[start..start + len]
}

/// Decode only the spectrum -> spatial stage (no color mixing or sigmoid);
/// the exact inverse of [`encode`]. Returns `[C, H, W]` data.
pub fn decode_raw(s: &SpectrumImage) -> Vec<f64> {
    let mut graph = Graph::new();
    let leaf = graph.leaf_raw(s.params.clone(), s.param_shape());
    let out = graph
        .spectrum_decode(leaf, &s.scales, s.height, s.width, "decode_raw")
        .expect("shapes are consistent by construction");
    graph.data(out).to_vec()
}

/// Channel mixing matrix applied at decode time. Must be invertible; build
/// one from a dataset pixel covariance via [`ColorMatrix::from_covariance`]
/// to decorrelate the optimized image's color distribution.
#[derive(Debug, Clone)]
pub struct ColorMatrix {
    matrix: Vec<f64>,
    channels: usize,
}

impl ColorMatrix {
    pub fn identity(channels: usize) -> ColorMatrix {
        let mut matrix = vec![0.0; channels * channels];
        for i in 0..channels {
            matrix[i * channels + i] = 1.0;
        }
        ColorMatrix { matrix, channels }
    }

    /// Validate and wrap a row-major `channels x channels` matrix.
    pub fn new(matrix: Vec<f64>, channels: usize) -> Result<ColorMatrix> {
        if matrix.len() != channels * channels {
            return Err(Error::Shape {
                context: "ColorMatrix::new".into(),
                detail: format!("{} values != {channels}x{channels}", matrix.len()),
            });
        }
        if !is_invertible(&matrix, channels) {
            return Err(Error::Config("color matrix is not invertible".into()));
        }
        Ok(ColorMatrix { matrix, channels })
    }

    /// Lower Cholesky factor `L` of a covariance matrix, so that mixing
    /// whitened (iid standard normal) channels by `L` reproduces the
    /// covariance: `Cov(L z) = L L^T`.
    pub fn from_covariance(cov: &[f64], channels: usize) -> Result<ColorMatrix> {
        if cov.len() != channels * channels {
            return Err(Error::Shape {
                context: "ColorMatrix::from_covariance".into(),
                detail: format!("{} values != {channels}x{channels}", cov.len()),
            });
        }
        let mut l = vec![0.0; channels * channels];
        for i in 0..channels {
            for j in 0..=i {
                let mut sum = cov[i * channels + j];
                for k in 0..j {
                    sum -= l[i * channels + k] * l[j * channels + k];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::Config(
                            "covariance is not positive definite; cannot build color matrix".into(),
                        ));
                    }
                    l[i * channels + j] = sum.sqrt();
                } else {
                    l[i * channels + j] = sum / l[j * channels + j];
                }
            }
        }
        ColorMatrix::new(l, channels)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// Gaussian elimination with partial pivoting; true when no pivot collapses.
fn is_invertible(matrix: &[f64], n: usize) -> bool {
    let mut m = matrix.to_vec();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if m[pivot * n + col].abs() < 1e-12 {
            return false;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
        }
        let p = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / p;
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_spectrum_decodes_to_mid_gray() {
        let s = zero_spectrum(16, 16, 3).unwrap();
        let img = s.decode(&ColorMatrix::identity(3)).unwrap();
        for &v in img.data() {
            assert!((v - 0.5).abs() < 1e-15, "sigmoid(0) = 0.5");
        }
    }

    #[test]
    fn dc_only_spectrum_is_spatially_constant() {
        let mut s = zero_spectrum(16, 16, 1).unwrap();
        s.params_mut()[0] = 0.3; // real part of the (0,0) bin, channel 0
        let raw = decode_raw(&s);
        let first = raw[0];
        assert!(first != 0.0);
        for &v in &raw {
            assert!((v - first).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_image_to_spectrum_to_image() {
        let (h, w, c) = (16, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let image: Vec<f64> = (0..c * h * w).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let s = encode(&image, c, h, w).unwrap();
        let back = decode_raw(&s);
        let max_err = image
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-8, "roundtrip error {max_err}");
    }

    #[test]
    fn decode_stays_in_unit_interval() {
        let s = fourier_param_init(16, 16, 3, 5).unwrap();
        let img = s.decode(&ColorMatrix::identity(3)).unwrap();
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn identity_color_matrix_keeps_channels_independent() {
        let mut s = zero_spectrum(8, 8, 3).unwrap();
        // put energy only into channel 0
        let plane = 8 * (8 / 2 + 1);
        s.params_mut()[..plane].iter_mut().enumerate().for_each(|(i, v)| {
            *v = (i as f64 * 0.13).sin() * 0.2;
        });
        let raw = decode_raw(&s);
        let hw = 64;
        assert!(raw[..hw].iter().any(|&v| v.abs() > 1e-9));
        assert!(raw[hw..].iter().all(|&v| v == 0.0), "other channels untouched");
    }

    #[test]
    fn spectrum_decode_gradient_matches_finite_differences() {
        let s = fourier_param_init(8, 8, 1, 9).unwrap();
        let weights: Vec<f64> = (0..64).map(|i| ((i * 29) % 13) as f64 * 0.1 - 0.6).collect();
        let eval = |params: &[f64]| -> f64 {
            let mut g = Graph::new();
            let leaf = g.leaf_raw(params.to_vec(), s.param_shape());
            let img = g.spectrum_decode(leaf, s.scales(), 8, 8, "t").unwrap();
            let ws = g.weighted_sum(img, weights.clone(), "ws").unwrap();
            g.scalar(ws)
        };
        let mut g = Graph::new();
        let leaf = g.leaf_raw(s.params().to_vec(), s.param_shape());
        let img = g.spectrum_decode(leaf, s.scales(), 8, 8, "t").unwrap();
        let ws = g.weighted_sum(img, weights.clone(), "ws").unwrap();
        g.backward(ws, &[1.0]).unwrap();
        let analytic = g.grad(leaf).unwrap().to_vec();

        let step = 1e-6;
        let base = s.params().to_vec();
        for i in (0..base.len()).step_by(7) {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
            assert!(
                (fd - analytic[i]).abs() < 1e-5,
                "param {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn cholesky_reproduces_covariance_of_mixed_noise() {
        // sample-covariance oracle: mix iid standard normals by L and check
        // the empirical covariance approaches the target within 20%
        let cov = [0.05, 0.03, 0.01, 0.03, 0.06, 0.02, 0.01, 0.02, 0.04];
        let color = ColorMatrix::from_covariance(&cov, 3).unwrap();
        let l = color.matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 200_000;
        let mut acc = [0.0f64; 9];
        let mut mean = [0.0f64; 3];
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let z: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let x = [
                l[0] * z[0] + l[1] * z[1] + l[2] * z[2],
                l[3] * z[0] + l[4] * z[1] + l[5] * z[2],
                l[6] * z[0] + l[7] * z[1] + l[8] * z[2],
            ];
            for (m, v) in mean.iter_mut().zip(&x) {
                *m += v;
            }
            samples.push(x);
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for x in &samples {
            for a in 0..3 {
                for b in 0..3 {
                    acc[a * 3 + b] += (x[a] - mean[a]) * (x[b] - mean[b]);
                }
            }
        }
        for (i, v) in acc.iter_mut().enumerate() {
            *v /= n as f64;
            let rel = (*v - cov[i]).abs() / cov[i].abs();
            assert!(rel < 0.20, "entry {i}: empirical {v} vs target {} (rel {rel})", cov[i]);
        }
    }

    #[test]
    fn singular_color_matrix_is_rejected() {
        let singular = vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0];
        assert!(ColorMatrix::new(singular, 3).is_err());
        assert!(ColorMatrix::new(vec![1.0; 9], 3).is_err());
        let not_pd = vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(ColorMatrix::from_covariance(&not_pd, 3).is_err());
    }

    #[test]
    fn init_requires_minimum_size() {
        assert!(fourier_param_init(4, 16, 3, 0).is_err());
        assert!(fourier_param_init(16, 16, 0, 0).is_err());
    }
}
