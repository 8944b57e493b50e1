//! Diversity report: per-method, per-metric distance statistics with a
//! provenance block, serialized as JSON and CSV, plus contact-sheet tiling.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phash::RasterImage;

/// Mean, standard error (sample standard deviation over sqrt(n)), and the
/// number of items behind the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MetricStat {
    /// Summarize a sample. A single observation has zero standard error.
    pub fn from_values(values: &[f64]) -> MetricStat {
        let n = values.len();
        if n == 0 {
            return MetricStat { mean: 0.0, stderr: 0.0, n: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MetricStat { mean, stderr, n }
    }

    pub fn exact(value: f64, n: usize) -> MetricStat {
        MetricStat { mean: value, stderr: 0.0, n }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
    /// Channel count of the visualized layer; equals the final conv width.
    pub viz_channels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyBlock {
    pub parent: f64,
    pub children: BTreeMap<String, f64>,
}

/// Per-method diversity table. Method keys are `snapshot` / `prune_tune`;
/// metric keys are hash algorithm names for visualizations, `d_kl` /
/// `d_pdr` for output metrics, and `rmse` plus hash names for saliency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityReport {
    pub provenance: Provenance,
    pub accuracy: AccuracyBlock,
    pub visualization: BTreeMap<String, BTreeMap<String, MetricStat>>,
    pub output_metrics: BTreeMap<String, BTreeMap<String, MetricStat>>,
    pub saliency: BTreeMap<String, BTreeMap<String, MetricStat>>,
}

impl DiversityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// CSV rendering with stable ordering: section by section, methods and
    /// metrics alphabetical. Columns: method, metric, mean, stderr, n.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,mean,stderr,n\n");
        let sections: [(&str, &BTreeMap<String, BTreeMap<String, MetricStat>>); 3] = [
            ("viz", &self.visualization),
            ("output", &self.output_metrics),
            ("saliency", &self.saliency),
        ];
        for (prefix, table) in sections {
            for (method, metrics) in table {
                for (metric, stat) in metrics {
                    out.push_str(&format!(
                        "{method},{prefix}_{metric},{},{},{}\n",
                        stat.mean, stat.stderr, stat.n
                    ));
                }
            }
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json())?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DiversityReport> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("report {}: {e}", path.display())))
    }
}

/// Tile equally sized rasters into a grid contact sheet with a 2-pixel gap.
pub fn tile_grid(images: &[RasterImage], columns: usize) -> Result<RasterImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("tile_grid needs at least one image".into()))?;
    let (w, h, c) = (first.width(), first.height(), first.channels());
    if images.iter().any(|i| i.width() != w || i.height() != h || i.channels() != c) {
        return Err(Error::InvalidArgument("tile_grid images must share dimensions".into()));
    }
    let cols = columns.max(1).min(images.len());
    let rows = images.len().div_ceil(cols);
    let gap = 2usize;
    let out_w = cols * w + (cols - 1) * gap;
    let out_h = rows * h + (rows - 1) * gap;
    let mut data = vec![0.0; out_w * out_h * c];
    for (idx, img) in images.iter().enumerate() {
        let (gx, gy) = (idx % cols, idx / cols);
        let (ox, oy) = (gx * (w + gap), gy * (h + gap));
        for y in 0..h {
            for x in 0..w {
                let src = img.pixel(x, y);
                let dst = ((oy + y) * out_w + ox + x) * c;
                data[dst..dst + c].copy_from_slice(src);
            }
        }
    }
    RasterImage::new(out_w, out_h, c, data)
}
