//! PNG input/output for raster images.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::phash::RasterImage;

/// Write a raster as an 8-bit PNG (grayscale or RGB according to its
/// channel count).
pub fn save_png(img: &RasterImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let bytes = img.to_bytes();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = match img.channels() {
        1 => GrayImage::from_raw(w, h, bytes)
            .expect("buffer sized by construction")
            .save(path),
        _ => RgbImage::from_raw(w, h, bytes)
            .expect("buffer sized by construction")
            .save(path),
    };
    result.map_err(|e| Error::InvalidArgument(format!("png write {}: {e}", path.display())))
}

/// Load a PNG as a raster: RGB(A) sources become 3-channel images, gray
/// sources stay single-channel.
pub fn load_png(path: &Path) -> Result<RasterImage> {
    let img = image::open(path)
        .map_err(|e| Error::InvalidArgument(format!("png read {}: {e}", path.display())))?;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            RasterImage::from_gray8(w, h, g.as_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            RasterImage::from_rgb8(w, h, rgb.as_raw())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let data: Vec<u8> = (0..48).map(|i| (i * 5) as u8).collect();
        let img = RasterImage::from_rgb8(4, 4, &data).unwrap();
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.channels(), 3);
        assert_eq!(back.to_bytes(), data);
    }

    #[test]
    fn gray_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let data: Vec<u8> = (0..16).map(|i| (i * 16) as u8).collect();
        let img = RasterImage::from_gray8(4, 4, &data).unwrap();
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(back.to_bytes(), data);
    }
}
