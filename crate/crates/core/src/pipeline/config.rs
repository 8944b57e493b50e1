//! Experiment configuration: a TOML file with one section per pipeline
//! stage. Every field has a desk-scale default, so a minimal config is just
//! a `[run]` section with a seed and an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::forge::{ParentConfig, SnapshotConfig, TuneConfig};
use crate::lens::VizConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { seed: 42, output_dir: PathBuf::from("runs/default") }
    }
}

/// Dataset source: the synthetic shape generator or external IDX files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default = "default_train_size")]
        train_size: usize,
        #[serde(default = "default_val_size")]
        val_size: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_train_size() -> usize {
    2000
}

fn default_val_size() -> usize {
    500
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic { train_size: default_train_size(), val_size: default_val_size() }
    }
}

/// Saliency-comparison stage settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyStageConfig {
    /// SmoothGrad sample count.
    pub samples: usize,
    /// Noise sigma as a fraction of the input value range.
    pub sigma_frac: f64,
    /// Upper bound on validation images used for saliency distances.
    pub max_images: usize,
}

impl Default for SaliencyStageConfig {
    fn default() -> Self {
        SaliencyStageConfig { samples: 25, sigma_frac: 0.10, max_images: 2000 }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub parent: ParentConfig,
    #[serde(default)]
    pub snapshot: SnapshotConfig,
    #[serde(default)]
    pub prune_tune: TuneConfig,
    #[serde(default)]
    pub viz: VizConfig,
    #[serde(default)]
    pub saliency: SaliencyStageConfig,
}

impl ExperimentConfig {
    /// Parse a TOML config file; returns the config together with the
    /// SHA-256 digest of the file bytes.
    pub fn load(path: &Path) -> Result<(ExperimentConfig, String)> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(
            std::str::from_utf8(&bytes)
                .map_err(|_| Error::Config(format!("{} is not utf-8", path.display())))?,
        )
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok((cfg, digest_hex(&bytes)))
    }

    pub fn from_toml_str(raw: &str) -> Result<(ExperimentConfig, String)> {
        let cfg: ExperimentConfig =
            toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok((cfg, digest_hex(raw.as_bytes())))
    }

    /// Check value ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Synthetic { train_size, val_size } => {
                if *train_size == 0 || *val_size == 0 {
                    return Err(Error::Config("dataset sizes must be positive".into()));
                }
            }
            DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if !p.exists() {
                        return Err(Error::Config(format!("dataset path {} does not exist", p.display())));
                    }
                }
            }
        }
        if self.parent.batch_size == 0
            || self.snapshot.batch_size == 0
            || self.prune_tune.batch_size == 0
        {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.snapshot.cycles == 0 || self.snapshot.epochs_per_cycle == 0 {
            return Err(Error::Config("snapshot needs cycles >= 1 and epochs_per_cycle >= 1".into()));
        }
        if self.prune_tune.pairs == 0 {
            return Err(Error::Config("prune_tune needs pairs >= 1".into()));
        }
        self.viz.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.saliency.samples == 0 {
            return Err(Error::Config("saliency needs samples >= 1".into()));
        }
        if self.saliency.sigma_frac < 0.0 {
            return Err(Error::Config("saliency sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// Build or load the dataset this config describes. The synthetic
    /// generator is seeded from the run seed.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Synthetic { train_size, val_size } => data::synthetic(&data::SyntheticConfig {
                train_size: *train_size,
                val_size: *val_size,
                seed: crate::seeds::derive(self.run.seed, "dataset"),
            }),
            DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } => {
                data::load_idx(train_images, train_labels, test_images, test_labels)
            }
        }
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
