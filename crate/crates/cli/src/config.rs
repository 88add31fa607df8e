use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uatr::features::FeatureConfig;
use uatr::nn::TrainConfig;
use uatr::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub per_class: usize,
    pub duration: f64,
    pub sample_rate: f64,
    pub fractions: [f64; 3],
    /// Overrides every profile's SNR range when set.
    pub snr_range: Option<(f64, f64)>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_class: 200,
            duration: 4.0,
            sample_rate: 16000.0,
            fractions: [0.8, 0.1, 0.1],
            snr_range: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

/// Everything a run needs; flags on the command line override these values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset synthesis and model initialisation seed.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub features: FeatureConfig,
    /// Analysis window length; clips are cut into non-overlapping windows.
    pub segment_seconds: f64,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            features: FeatureConfig {
                height: 64,
                width: 64,
                ..FeatureConfig::default()
            },
            segment_seconds: 4.0,
            train: TrainConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.features.framing.validate()?;
        self.features.compression.validate()?;
        self.train.validate()?;
        uatr::audio::dataset::validate_fractions(self.dataset.fractions)?;
        if self.dataset.per_class == 0 {
            return Err(Error::Config("dataset.per_class must be >= 1".into()));
        }
        if !(self.dataset.duration > 0.0) || !(self.segment_seconds > 0.0) {
            return Err(Error::Config("durations must be > 0".into()));
        }
        if self.features.height == 0 || self.features.width == 0 {
            return Err(Error::Config(
                "features.height and features.width must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
