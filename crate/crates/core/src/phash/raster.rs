//! Raster image container and the minimal pixel operations the hash suite
//! needs: grayscale conversion, exact box-filter resizing, and RGB->HSV.

use crate::error::{Error, Result};

/// Interleaved row-major raster with 1 (grayscale) or 3 (RGB) channels and
/// values in `[0, 1]`. 8-bit sources are divided by 255 on load.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape {
                context: "RasterImage::new".into(),
                detail: format!(
                    "{} values != {width} x {height} x {channels}",
                    data.len()
                ),
            });
        }
        Ok(RasterImage { width, height, channels, data })
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        RasterImage::new(width, height, 3, data)
    }

    pub fn from_gray8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        RasterImage::new(width, height, 1, data)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        RasterImage::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Quantize to 8-bit samples (round-to-nearest, clamped).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Luma conversion `0.299 R + 0.587 G + 0.114 B`; grayscale input is
    /// returned unchanged.
    pub fn grayscale(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data: Vec<f64> = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        RasterImage { width: self.width, height: self.height, channels: 1, data }
    }

    /// Exact area-average (box filter) resampling. Every output pixel is the
    /// integral of the source over its back-projected rectangle divided by
    /// the rectangle area, so constant images stay constant and results are
    /// platform-independent.
    pub fn resize(&self, new_width: usize, new_height: usize) -> Result<RasterImage> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::InvalidArgument("resize target dimensions must be >= 1".into()));
        }
        if new_width == self.width && new_height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let mut out = vec![0.0; new_width * new_height * self.channels];
        let mut acc = vec![0.0; self.channels];
        for oy in 0..new_height {
            let y0 = oy as f64 * sy;
            let y1 = (oy + 1) as f64 * sy;
            for ox in 0..new_width {
                let x0 = ox as f64 * sx;
                let x1 = (ox + 1) as f64 * sx;
                let iy0 = y0.floor() as usize;
                let iy1 = (y1.ceil() as usize).min(self.height);
                let ix0 = x0.floor() as usize;
                let ix1 = (x1.ceil() as usize).min(self.width);
                // accumulate deviations from an anchor pixel: weights sum to
                // the cell area, so this is algebraically the weighted mean
                // but maps constant regions to exactly the constant
                let anchor = self.pixel(ix0.min(self.width - 1), iy0.min(self.height - 1)).to_vec();
                acc.fill(0.0);
                let mut area = 0.0;
                for iy in iy0..iy1 {
                    let hy = overlap(iy as f64, (iy + 1) as f64, y0, y1);
                    if hy <= 0.0 {
                        continue;
                    }
                    for ix in ix0..ix1 {
                        let hx = overlap(ix as f64, (ix + 1) as f64, x0, x1);
                        if hx <= 0.0 {
                            continue;
                        }
                        let wgt = hx * hy;
                        let p = self.pixel(ix, iy);
                        for c in 0..self.channels {
                            acc[c] += wgt * (p[c] - anchor[c]);
                        }
                        area += wgt;
                    }
                }
                let o = (oy * new_width + ox) * self.channels;
                for c in 0..self.channels {
                    out[o + c] = anchor[c] + acc[c] / area;
                }
            }
        }
        RasterImage::new(new_width, new_height, self.channels, out)
    }

    /// Standard hexcone RGB->HSV conversion; all components in `[0, 1]`
    /// (hue is the angle divided by 360 degrees).
    pub fn rgb_to_hsv(&self) -> Result<RasterImage> {
        if self.channels != 3 {
            return Err(Error::Hash("rgb_to_hsv requires a 3-channel image".into()));
        }
        let data: Vec<f64> = self
            .data
            .chunks_exact(3)
            .flat_map(|p| {
                let (h, s, v) = hsv_pixel(p[0], p[1], p[2]);
                [h, s, v]
            })
            .collect();
        RasterImage::new(self.width, self.height, 3, data)
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn hsv_pixel(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        let mut h = (g - b) / delta / 6.0;
        if h < 0.0 {
            h += 1.0;
        }
        h
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, v)
}
