//! Datasets: a deterministic synthetic generator (10 classes of colored
//! shapes on noisy backgrounds) and an IDX-format loader for external
//! grayscale sets. Images are stored planar `[C, H, W]`, values in `[0, 1]`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 32;
pub const CHANNELS: usize = 3;
pub const CLASSES: usize = 10;

/// One partition of a dataset. `images` holds `n` planar `[C, H, W]` images
/// back to back.
#[derive(Debug, Clone)]
pub struct Split {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub n: usize,
}

impl Split {
    pub fn image(&self, i: usize) -> &[f64] {
        let len = CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
        &self.images[i * len..(i + 1) * len]
    }

    /// Gather the given sample indices into a `[B, C, H, W]` batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let len = CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(vec![indices.len(), CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data)
            .expect("batch assembly is consistent");
        (t, labels)
    }

    /// Per-channel pixel mean over every image.
    pub fn channel_means(&self) -> [f64; CHANNELS] {
        let hw = IMAGE_SIZE * IMAGE_SIZE;
        let mut means = [0.0; CHANNELS];
        for i in 0..self.n {
            let img = self.image(i);
            for (c, m) in means.iter_mut().enumerate() {
                *m += img[c * hw..(c + 1) * hw].iter().sum::<f64>();
            }
        }
        let count = (self.n * hw) as f64;
        for m in &mut means {
            *m /= count;
        }
        means
    }

    /// 3x3 covariance of pixel color vectors across all images (population
    /// normalization).
    pub fn pixel_covariance(&self) -> [f64; CHANNELS * CHANNELS] {
        let hw = IMAGE_SIZE * IMAGE_SIZE;
        let means = self.channel_means();
        let mut cov = [0.0; CHANNELS * CHANNELS];
        for i in 0..self.n {
            let img = self.image(i);
            for p in 0..hw {
                let d = [
                    img[p] - means[0],
                    img[hw + p] - means[1],
                    img[2 * hw + p] - means[2],
                ];
                for a in 0..CHANNELS {
                    for b in 0..CHANNELS {
                        cov[a * CHANNELS + b] += d[a] * d[b];
                    }
                }
            }
        }
        let count = (self.n * hw) as f64;
        for c in &mut cov {
            *c /= count;
        }
        cov
    }
}

/// Train/validation dataset with a fixed number of classes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub classes: usize,
}

/// Synthetic generator parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

#[derive(Clone, Copy)]
enum Shape {
    Circle,
    Square,
    Triangle,
    Plus,
    Ring,
}

const SHAPES: [Shape; 5] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Plus, Shape::Ring];
const COLORS: [[f64; 3]; 2] = [[0.85, 0.20, 0.15], [0.15, 0.30, 0.85]];

/// Deterministic synthetic dataset: class `c` is shape `c / 2` in color
/// `c % 2`. Classes are assigned round-robin, so sizes divisible by 10 are
/// exactly balanced.
pub fn synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.train_size == 0 || cfg.val_size == 0 {
        return Err(Error::Dataset("synthetic sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = synth_split(cfg.train_size, &mut rng);
    let val = synth_split(cfg.val_size, &mut rng);
    Ok(Dataset { train, val, classes: CLASSES })
}

fn synth_split(n: usize, rng: &mut ChaCha8Rng) -> Split {
    let len = CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
    let mut images = Vec::with_capacity(n * len);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % CLASSES;
        images.extend_from_slice(&draw_sample(class, rng));
        labels.push(class);
    }
    Split { images, labels, n }
}

fn draw_sample(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let shape = SHAPES[class / 2];
    let base = COLORS[class % 2];

    let cx = 16.0 + rng.gen_range(-4.0..4.0);
    let cy = 16.0 + rng.gen_range(-4.0..4.0);
    let size = rng.gen_range(7.0..11.0);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let color: Vec<f64> = base
        .iter()
        .map(|&c: &f64| (c + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0))
        .collect();
    let bg = rng.gen_range(0.05..0.15);

    let hw = IMAGE_SIZE * IMAGE_SIZE;
    let mut img = vec![0.0; CHANNELS * hw];
    let (sin, cos) = theta.sin_cos();
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // rotate into the shape's local frame
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let inside = match shape {
                Shape::Circle => u * u + v * v <= size * size,
                Shape::Square => u.abs() <= 0.8 * size && v.abs() <= 0.8 * size,
                Shape::Triangle => in_triangle(u, v, size),
                Shape::Plus => {
                    (u.abs() <= 0.35 * size && v.abs() <= size)
                        || (v.abs() <= 0.35 * size && u.abs() <= size)
                }
                Shape::Ring => {
                    let r2 = u * u + v * v;
                    r2 <= size * size && r2 >= (0.55 * size) * (0.55 * size)
                }
            };
            let p = y * IMAGE_SIZE + x;
            for c in 0..CHANNELS {
                img[c * hw + p] = if inside { color[c] } else { bg };
            }
        }
    }
    for value in &mut img {
        *value = (*value + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
    }
    img
}

fn in_triangle(u: f64, v: f64, size: f64) -> bool {
    // upward triangle with apex (0, -s) and base corners (+-0.87s, 0.65s)
    let (ax, ay) = (0.0, -size);
    let (bx, by) = (-0.87 * size, 0.65 * size);
    let (cx, cy) = (0.87 * size, 0.65 * size);
    let sign = |x0: f64, y0: f64, x1: f64, y1: f64, x2: f64, y2: f64| {
        (x0 - x2) * (y1 - y2) - (x1 - x2) * (y0 - y2)
    };
    let d1 = sign(u, v, ax, ay, bx, by);
    let d2 = sign(u, v, bx, by, cx, cy);
    let d3 = sign(u, v, cx, cy, ax, ay);
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}

/// Load an external IDX-format grayscale dataset (MNIST layout). Images are
/// center-padded or center-cropped to 32x32 and replicated to 3 channels.
pub fn load_idx(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
) -> Result<Dataset> {
    let train = idx_split(train_images, train_labels)?;
    let val = idx_split(test_images, test_labels)?;
    Ok(Dataset { train, val, classes: CLASSES })
}

fn idx_split(images: &Path, labels: &Path) -> Result<Split> {
    let (raw, n, rows, cols) = read_idx_images(images)?;
    let lab = read_idx_labels(labels)?;
    if lab.len() != n {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            n,
            lab.len()
        )));
    }
    let hw = IMAGE_SIZE * IMAGE_SIZE;
    let mut out = vec![0.0; n * CHANNELS * hw];
    // center the source grid inside (or crop it to) the 32x32 target
    for i in 0..n {
        let src = &raw[i * rows * cols..(i + 1) * rows * cols];
        let dst = &mut out[i * CHANNELS * hw..(i + 1) * CHANNELS * hw];
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let sy = y as i64 - (IMAGE_SIZE as i64 - rows as i64) / 2;
                let sx = x as i64 - (IMAGE_SIZE as i64 - cols as i64) / 2;
                let v = if sy >= 0 && sy < rows as i64 && sx >= 0 && sx < cols as i64 {
                    src[sy as usize * cols + sx as usize] as f64 / 255.0
                } else {
                    0.0
                };
                for c in 0..CHANNELS {
                    dst[c * hw + y * IMAGE_SIZE + x] = v;
                }
            }
        }
    }
    let labels: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= CLASSES) {
        return Err(Error::Dataset(format!("label {bad} out of range for {CLASSES} classes")));
    }
    Ok(Split { images: out, labels, n })
}

/// Number of images an IDX file declares (header only).
pub fn idx_image_count(path: &Path) -> Result<usize> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Dataset(format!("{}: truncated IDX header", path.display())));
    }
    Ok(u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize)
}

fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::Dataset(format!("{}: truncated IDX header", path.display())));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic != 0x0000_0803 {
        return Err(Error::Dataset(format!(
            "{}: bad IDX image magic {magic:#010x}, expected 0x00000803",
            path.display()
        )));
    }
    let n = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let rows = u32::from_be_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_be_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 16 + n * rows * cols {
        return Err(Error::Dataset(format!("{}: IDX payload size mismatch", path.display())));
    }
    Ok((bytes[16..].to_vec(), n, rows, cols))
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Dataset(format!("{}: truncated IDX header", path.display())));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic != 0x0000_0801 {
        return Err(Error::Dataset(format!(
            "{}: bad IDX label magic {magic:#010x}, expected 0x00000801",
            path.display()
        )));
    }
    let n = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + n {
        return Err(Error::Dataset(format!("{}: IDX payload size mismatch", path.display())));
    }
    Ok(bytes[8..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_bytes() {
        let cfg = SyntheticConfig { train_size: 50, val_size: 20, seed: 9 };
        let a = synthetic(&cfg).unwrap();
        let b = synthetic(&cfg).unwrap();
        let bits = |s: &Split| s.images.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.train), bits(&b.train));
        assert_eq!(bits(&a.val), bits(&b.val));
        assert_eq!(a.train.labels, b.train.labels);
    }

    #[test]
    fn class_counts_are_balanced() {
        let cfg = SyntheticConfig { train_size: 200, val_size: 100, seed: 1 };
        let ds = synthetic(&cfg).unwrap();
        let mut counts = [0usize; CLASSES];
        for &l in &ds.train.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 20), "counts {counts:?}");
    }

    #[test]
    fn values_stay_in_unit_range() {
        let cfg = SyntheticConfig { train_size: 30, val_size: 10, seed: 3 };
        let ds = synthetic(&cfg).unwrap();
        assert!(ds.train.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn covariance_is_symmetric_positive_diagonal() {
        let cfg = SyntheticConfig { train_size: 60, val_size: 10, seed: 5 };
        let ds = synthetic(&cfg).unwrap();
        let cov = ds.train.pixel_covariance();
        for a in 0..3 {
            assert!(cov[a * 3 + a] > 0.0);
            for b in 0..3 {
                assert!((cov[a * 3 + b] - cov[b * 3 + a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn idx_roundtrip_and_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("img.idx");
        let labs = dir.path().join("lab.idx");

        // two 4x4 images
        let mut ibytes = Vec::new();
        ibytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        ibytes.extend_from_slice(&2u32.to_be_bytes());
        ibytes.extend_from_slice(&4u32.to_be_bytes());
        ibytes.extend_from_slice(&4u32.to_be_bytes());
        ibytes.extend((0..32).map(|i| (i * 8) as u8));
        fs::write(&imgs, &ibytes).unwrap();

        let mut lbytes = Vec::new();
        lbytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbytes.extend_from_slice(&2u32.to_be_bytes());
        lbytes.extend_from_slice(&[3u8, 7u8]);
        fs::write(&labs, &lbytes).unwrap();

        let split = idx_split(&imgs, &labs).unwrap();
        assert_eq!(split.n, 2);
        assert_eq!(split.labels, vec![3, 7]);
        // first source pixel lands at the centered offset (32-4)/2 = 14
        let hw = IMAGE_SIZE * IMAGE_SIZE;
        assert_eq!(split.image(0)[14 * IMAGE_SIZE + 14], 0.0);
        assert!((split.image(0)[14 * IMAGE_SIZE + 15] - 8.0 / 255.0).abs() < 1e-12);
        // channels replicated
        assert_eq!(split.image(0)[14 * IMAGE_SIZE + 15], split.image(0)[hw + 14 * IMAGE_SIZE + 15]);

        // corrupt the magic
        ibytes[3] = 0x42;
        fs::write(&imgs, &ibytes).unwrap();
        let err = idx_split(&imgs, &labs).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }
}
