//! Orthonormal 2D DCT-II and the 2D Haar discrete wavelet transform used by
//! the frequency-domain hashes.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Orthonormal DCT-II of a square `n x n` block (separable: the 1-D
/// transform applied to rows and then columns).
///
/// AC terms are computed against the mean-centered signal. Since every AC
/// basis row sums to zero this is algebraically identical, and it makes the
/// transform of a constant signal exactly zero outside the DC bin instead
/// of leaving rounding noise there.
pub fn dct2(block: &[f64], n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument("dct2 needs n >= 2".into()));
    }
    if block.len() != n * n {
        return Err(Error::Shape {
            context: "dct2".into(),
            detail: format!("{} values != {n} x {n}", block.len()),
        });
    }
    let basis = dct_basis(n);
    let mut tmp = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    let mut coeffs = vec![0.0; n];
    for y in 0..n {
        row.copy_from_slice(&block[y * n..(y + 1) * n]);
        dct_1d(&row, &basis, n, &mut coeffs);
        for u in 0..n {
            tmp[y * n + u] = coeffs[u];
        }
    }
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for (y, r) in row.iter_mut().enumerate() {
            *r = tmp[y * n + u];
        }
        dct_1d(&row, &basis, n, &mut coeffs);
        for v in 0..n {
            out[v * n + u] = coeffs[v];
        }
    }
    Ok(out)
}

fn dct_1d(x: &[f64], basis: &[f64], n: usize, out: &mut [f64]) {
    // center on x[0]: subtraction is exact for constant signals, so every
    // AC coefficient of a constant input is exactly zero
    let center = x[0];
    out[0] = (1.0 / n as f64).sqrt() * x.iter().sum::<f64>();
    for u in 1..n {
        let mut acc = 0.0;
        for i in 0..n {
            acc += basis[u * n + i] * (x[i] - center);
        }
        out[u] = acc;
    }
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct2(coeffs: &[f64], n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument("idct2 needs n >= 2".into()));
    }
    if coeffs.len() != n * n {
        return Err(Error::Shape {
            context: "idct2".into(),
            detail: format!("{} values != {n} x {n}", coeffs.len()),
        });
    }
    let basis = dct_basis(n);
    let mut tmp = vec![0.0; n * n];
    for u in 0..n {
        for y in 0..n {
            let mut acc = 0.0;
            for v in 0..n {
                acc += basis[v * n + y] * coeffs[v * n + u];
            }
            tmp[y * n + u] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for u in 0..n {
                acc += basis[u * n + x] * tmp[y * n + u];
            }
            out[y * n + x] = acc;
        }
    }
    Ok(out)
}

/// Row-major orthonormal DCT-II basis: `b[u][i] = a(u) cos(pi (2i+1) u / 2n)`
/// with `a(0) = sqrt(1/n)` and `a(u) = sqrt(2/n)` otherwise.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n * n];
    for u in 0..n {
        let a = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            basis[u * n + i] = a * (PI * (2 * i + 1) as f64 * u as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

/// Multi-level 2D Haar analysis with orthonormal scaling. The result uses
/// the usual in-place subband layout: after `levels` passes the
/// approximation band occupies the top-left `h/2^levels x w/2^levels`
/// corner, with detail bands around it.
pub fn haar_dwt2(img: &[f64], width: usize, height: usize, levels: usize) -> Result<Vec<f64>> {
    if levels == 0 {
        return Err(Error::InvalidArgument("haar_dwt2 needs levels >= 1".into()));
    }
    let div = 1usize << levels;
    if width % div != 0 || height % div != 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions {width}x{height} not divisible by 2^{levels}"
        )));
    }
    if img.len() != width * height {
        return Err(Error::Shape {
            context: "haar_dwt2".into(),
            detail: format!("{} values != {width} x {height}", img.len()),
        });
    }
    let mut out = img.to_vec();
    let (mut w, mut h) = (width, height);
    for _ in 0..levels {
        haar_level(&mut out, width, w, h);
        w /= 2;
        h /= 2;
    }
    Ok(out)
}

/// One analysis level over the `w x h` top-left region of a buffer with row
/// stride `stride`. 2x2 block `[a b; c d]` maps to
/// LL=(a+b+c+d)/2, HL=(a-b+c-d)/2, LH=(a+b-c-d)/2, HH=(a-b-c+d)/2.
fn haar_level(buf: &mut [f64], stride: usize, w: usize, h: usize) {
    let (hw, hh) = (w / 2, h / 2);
    let mut tmp = vec![0.0; w * h];
    for y in 0..hh {
        for x in 0..hw {
            let a = buf[(2 * y) * stride + 2 * x];
            let b = buf[(2 * y) * stride + 2 * x + 1];
            let c = buf[(2 * y + 1) * stride + 2 * x];
            let d = buf[(2 * y + 1) * stride + 2 * x + 1];
            tmp[y * w + x] = (a + b + c + d) / 2.0;
            tmp[y * w + hw + x] = (a - b + c - d) / 2.0;
            tmp[(hh + y) * w + x] = (a + b - c - d) / 2.0;
            tmp[(hh + y) * w + hw + x] = (a - b - c + d) / 2.0;
        }
    }
    for y in 0..h {
        buf[y * stride..y * stride + w].copy_from_slice(&tmp[y * w..(y + 1) * w]);
    }
}

/// Copy the top-left `size x size` approximation band out of a transformed
/// buffer with row stride `stride`.
pub fn approximation_band(buf: &[f64], stride: usize, size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        out.extend_from_slice(&buf[y * stride..y * stride + size]);
    }
    out
}
