//! Affine augmentation sampling for transformation-robust visualization:
//! jitter, scale about the center, rotate, jitter again, composed into one
//! output-to-input coordinate map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::AffineCoeffs;

/// 3x3 homogeneous transform (row-major, last row implicitly [0 0 1]).
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    m: [f64; 6],
}

impl Affine {
    pub fn identity() -> Affine {
        Affine { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] }
    }

    /// Inverse map of a shift by `(dx, dy)`: output (x, y) samples input
    /// (x - dx, y - dy).
    pub fn jitter(dx: f64, dy: f64) -> Affine {
        Affine { m: [1.0, 0.0, -dx, 0.0, 1.0, -dy] }
    }

    /// Inverse map of scaling by `s` about `(cx, cy)`.
    pub fn scale_about(s: f64, cx: f64, cy: f64) -> Affine {
        let inv = 1.0 / s;
        Affine { m: [inv, 0.0, cx - cx * inv, 0.0, inv, cy - cy * inv] }
    }

    /// Inverse map of rotating by `angle` radians about `(cx, cy)`.
    pub fn rotate_about(angle: f64, cx: f64, cy: f64) -> Affine {
        let (sin, cos) = (-angle).sin_cos();
        Affine {
            m: [
                cos,
                -sin,
                cx - cos * cx + sin * cy,
                sin,
                cos,
                cy - sin * cx - cos * cy,
            ],
        }
    }

    /// Coordinate-map composition `self . other` (apply `other`'s image op
    /// first, then `self`'s: the combined inverse map runs other(self(p))).
    pub fn then(&self, next: &Affine) -> Affine {
        // p_in = self.m applied to (next.m applied to p_out)
        let a = self.m;
        let b = next.m;
        Affine {
            m: [
                a[0] * b[0] + a[1] * b[3],
                a[0] * b[1] + a[1] * b[4],
                a[0] * b[2] + a[1] * b[5] + a[2],
                a[3] * b[0] + a[4] * b[3],
                a[3] * b[1] + a[4] * b[4],
                a[3] * b[2] + a[4] * b[5] + a[5],
            ],
        }
    }

    pub fn coeffs(&self) -> AffineCoeffs {
        AffineCoeffs(self.m)
    }
}

/// Augmentation magnitudes for one visualization step.
#[derive(Debug, Clone, Copy)]
pub struct AugmentSpec {
    pub jitter1: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub rotate_deg: f64,
    pub jitter2: usize,
}

/// Sample one augmentation: jitter (integer pixels), scale, rotation,
/// second jitter, composed so the image ops apply in that order.
pub fn sample_augmentation(spec: &AugmentSpec, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Affine {
    let j1 = spec.jitter1 as i64;
    let j2 = spec.jitter2 as i64;
    let (dx1, dy1) = (rng.gen_range(-j1..=j1) as f64, rng.gen_range(-j1..=j1) as f64);
    let scale = rng.gen_range(spec.scale_min..=spec.scale_max);
    let angle = rng.gen_range(-spec.rotate_deg..=spec.rotate_deg).to_radians();
    let (dx2, dy2) = (rng.gen_range(-j2..=j2) as f64, rng.gen_range(-j2..=j2) as f64);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    Affine::jitter(dx1, dy1)
        .then(&Affine::scale_about(scale, cx, cy))
        .then(&Affine::rotate_about(angle, cx, cy))
        .then(&Affine::jitter(dx2, dy2))
}
