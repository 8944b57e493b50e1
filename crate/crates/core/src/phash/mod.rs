//! Bit-exact 64-bit perceptual hash suite: average, perceptual (DCT),
//! difference, wavelet and color hashes, compared by Hamming distance.
//!
//! All resampling is exact area-average rather than a convolution filter, so
//! the same image bytes hash identically across platforms and runs. Bits are
//! packed row-major, most-significant-bit first; hashes serialize as 16
//! lowercase hex characters.

mod raster;
mod transform;

pub use raster::RasterImage;
pub use transform::{approximation_band, dct2, haar_dwt2, idct2};

use crate::error::{Error, Result};

/// Hash algorithm tag. Distances are only defined between equal tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashAlg {
    Ahash,
    Phash,
    Dhash,
    Whash,
    Colorhash,
}

impl HashAlg {
    pub const ALL: [HashAlg; 5] =
        [HashAlg::Ahash, HashAlg::Phash, HashAlg::Dhash, HashAlg::Whash, HashAlg::Colorhash];

    /// The four grayscale bit hashes (everything except the color hash).
    pub const GRAYSCALE: [HashAlg; 4] =
        [HashAlg::Ahash, HashAlg::Phash, HashAlg::Dhash, HashAlg::Whash];

    pub fn name(&self) -> &'static str {
        match self {
            HashAlg::Ahash => "ahash",
            HashAlg::Phash => "phash",
            HashAlg::Dhash => "dhash",
            HashAlg::Whash => "whash",
            HashAlg::Colorhash => "colorhash",
        }
    }

    pub fn parse(s: &str) -> Result<HashAlg> {
        match s {
            "ahash" => Ok(HashAlg::Ahash),
            "phash" => Ok(HashAlg::Phash),
            "dhash" => Ok(HashAlg::Dhash),
            "whash" => Ok(HashAlg::Whash),
            "colorhash" => Ok(HashAlg::Colorhash),
            other => Err(Error::Hash(format!(
                "unknown algorithm '{other}' (expected ahash|phash|dhash|whash|colorhash)"
            ))),
        }
    }
}

impl std::fmt::Display for HashAlg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A 64-bit perceptual hash tagged with the algorithm that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerceptualHash {
    bits: u64,
    algo: HashAlg,
}

impl PerceptualHash {
    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn algo(&self) -> HashAlg {
        self.algo
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.bits)
    }

    pub fn from_hex(hex: &str, algo: HashAlg) -> Result<PerceptualHash> {
        if hex.len() != 16 {
            return Err(Error::Hash(format!("hash hex must be 16 characters, got {}", hex.len())));
        }
        let bits = u64::from_str_radix(hex, 16)
            .map_err(|_| Error::Hash(format!("invalid hex '{hex}'")))?;
        Ok(PerceptualHash { bits, algo })
    }
}

impl std::fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Number of differing bit positions between two hashes of the same
/// algorithm; errors on a tag mismatch.
pub fn hamming(a: &PerceptualHash, b: &PerceptualHash) -> Result<u32> {
    if a.algo != b.algo {
        return Err(Error::Hash(format!(
            "cannot compare {} hash with {} hash",
            a.algo, b.algo
        )));
    }
    Ok((a.bits ^ b.bits).count_ones())
}

/// Pack 64 booleans row-major, MSB first.
fn pack_bits(bits: impl IntoIterator<Item = bool>) -> u64 {
    let mut out = 0u64;
    let mut count = 0;
    for b in bits {
        out = (out << 1) | b as u64;
        count += 1;
    }
    debug_assert_eq!(count, 64);
    out
}

/// Median of a set of values: the mean of the two middle order statistics
/// for even counts (matching numpy.median).
fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Mean computed as deviations from the first value, so a list of equal
/// values yields exactly that value (no pixel of a constant image can then
/// strictly exceed the mean).
fn anchored_mean(values: &[f64]) -> f64 {
    let anchor = values[0];
    anchor + values.iter().map(|v| v - anchor).sum::<f64>() / values.len() as f64
}

/// Average hash: grayscale, resize to 8x8, bit = pixel strictly greater
/// than the mean of the 64 pixels.
pub fn ahash(img: &RasterImage) -> Result<PerceptualHash> {
    let small = img.grayscale().resize(8, 8)?;
    let mean = anchored_mean(small.data());
    let bits = pack_bits(small.data().iter().map(|&p| p > mean));
    Ok(PerceptualHash { bits, algo: HashAlg::Ahash })
}

/// Perceptual hash: grayscale, resize to 32x32, orthonormal DCT-II, take the
/// top-left 8x8 low-frequency block (DC included), bit = coefficient
/// strictly greater than the block's median.
pub fn phash(img: &RasterImage) -> Result<PerceptualHash> {
    let small = img.grayscale().resize(32, 32)?;
    let coeffs = dct2(small.data(), 32)?;
    let mut block = Vec::with_capacity(64);
    for v in 0..8 {
        for u in 0..8 {
            block.push(coeffs[v * 32 + u]);
        }
    }
    let med = median(&block);
    let bits = pack_bits(block.iter().map(|&c| c > med));
    Ok(PerceptualHash { bits, algo: HashAlg::Phash })
}

/// Difference (gradient) hash: grayscale, resize to 9x8 (w x h),
/// bit(r, c) = pixel(r, c+1) strictly greater than pixel(r, c).
pub fn dhash(img: &RasterImage) -> Result<PerceptualHash> {
    let small = img.grayscale().resize(9, 8)?;
    let d = small.data();
    let bits = pack_bits((0..8).flat_map(|r| (0..8).map(move |c| (r, c))).map(|(r, c)| {
        d[r * 9 + c + 1] > d[r * 9 + c]
    }));
    Ok(PerceptualHash { bits, algo: HashAlg::Dhash })
}

/// Wavelet hash: grayscale, resize to 64x64, 3-level Haar DWT, bit =
/// approximation coefficient strictly greater than the band's median.
pub fn whash(img: &RasterImage) -> Result<PerceptualHash> {
    let small = img.grayscale().resize(64, 64)?;
    let t = haar_dwt2(small.data(), 64, 64, 3)?;
    let band = approximation_band(&t, 64, 8);
    let med = median(&band);
    let bits = pack_bits(band.iter().map(|&c| c > med));
    Ok(PerceptualHash { bits, algo: HashAlg::Whash })
}

/// Color hash: classify each pixel in HSV space as black (V < 0.25),
/// gray (S < 0.10) or one of 6 equal hue bins; quantize the 8 population
/// fractions to a byte each (`floor(fraction * 255)`) and concatenate.
/// Byte order: black, gray, hue bin 0..5, most significant byte first.
pub fn colorhash(img: &RasterImage) -> Result<PerceptualHash> {
    if img.channels() != 3 {
        return Err(Error::Hash(
            "colorhash requires a 3-channel image; use ahash for grayscale input".into(),
        ));
    }
    let hsv = img.rgb_to_hsv()?;
    let mut counts = [0usize; 8];
    let total = hsv.width() * hsv.height();
    for p in hsv.data().chunks_exact(3) {
        let (h, s, v) = (p[0], p[1], p[2]);
        let bucket = if v < 0.25 {
            0
        } else if s < 0.10 {
            1
        } else {
            2 + ((h * 6.0).floor() as usize).min(5)
        };
        counts[bucket] += 1;
    }
    let mut bits = 0u64;
    for &c in &counts {
        let frac = c as f64 / total as f64;
        let byte = (frac * 255.0).floor() as u64;
        bits = (bits << 8) | byte;
    }
    Ok(PerceptualHash { bits, algo: HashAlg::Colorhash })
}

/// Dispatch by algorithm tag.
pub fn hash_image(img: &RasterImage, algo: HashAlg) -> Result<PerceptualHash> {
    match algo {
        HashAlg::Ahash => ahash(img),
        HashAlg::Phash => phash(img),
        HashAlg::Dhash => dhash(img),
        HashAlg::Whash => whash(img),
        HashAlg::Colorhash => colorhash(img),
    }
}
