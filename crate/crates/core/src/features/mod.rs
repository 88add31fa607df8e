//! Audio window -> three-channel feature image.

pub mod cochleagram;
pub mod compress;
pub mod envelope;
pub mod framing;
pub mod image;
pub mod mfcc;

use serde::{Deserialize, Serialize};

pub use cochleagram::{cochleagram_energy, cochleagram_map, compute_cochleagram};
pub use compress::{log_compress, CompressionConfig};
pub use envelope::{analytic_envelope, EnvelopeExtractor};
pub use framing::{frame_energy, EnergyMap, FramingConfig, WindowShape};
pub use image::{config_hash, normalize_resize, FeatureImage, Provenance};
pub use mfcc::{compute_mfcc_image, mel_filterbank_energies, MfccConfig};

use crate::audio::{resample, AudioClip};
use crate::dsp::{build_filterbank, Filterbank, FilterbankConfig};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontend {
    Gammatone,
    Mfcc,
}

impl Frontend {
    pub fn name(self) -> &'static str {
        match self {
            Frontend::Gammatone => "gammatone",
            Frontend::Mfcc => "mfcc",
        }
    }
}

impl std::str::FromStr for Frontend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gammatone" => Ok(Frontend::Gammatone),
            "mfcc" => Ok(Frontend::Mfcc),
            other => Err(format!("unknown frontend {other:?} (expected gammatone or mfcc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub frontend: Frontend,
    pub filterbank: FilterbankConfig,
    pub framing: FramingConfig,
    pub compression: CompressionConfig,
    pub mfcc: MfccConfig,
    pub height: usize,
    pub width: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frontend: Frontend::Gammatone,
            filterbank: FilterbankConfig::default(),
            framing: FramingConfig::default(),
            compression: CompressionConfig::default(),
            mfcc: MfccConfig::default(),
            height: 224,
            width: 224,
        }
    }
}

impl FeatureConfig {
    pub fn sample_rate(&self) -> f64 {
        self.filterbank.sample_rate
    }

    /// Digest of the fields that influence this front-end's output.
    pub fn hash(&self) -> String {
        let relevant = match self.frontend {
            Frontend::Gammatone => serde_json::json!({
                "frontend": self.frontend,
                "filterbank": self.filterbank,
                "framing": self.framing,
                "compression": self.compression,
                "size": [self.height, self.width],
            }),
            Frontend::Mfcc => serde_json::json!({
                "frontend": self.frontend,
                "sample_rate": self.filterbank.sample_rate,
                "framing": self.framing,
                "mfcc": self.mfcc,
                "size": [self.height, self.width],
            }),
        };
        config_hash(relevant.to_string().as_bytes())
    }
}

/// A configured front-end; builds the filterbank once and reuses it.
#[derive(Debug)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    bank: Option<Filterbank>,
    hash: String,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.framing.validate()?;
        config.compression.validate()?;
        let bank = match config.frontend {
            Frontend::Gammatone => Some(build_filterbank(&config.filterbank)?),
            Frontend::Mfcc => None,
        };
        let hash = config.hash();
        Ok(Self { config, bank, hash })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn filterbank(&self) -> Option<&Filterbank> {
        self.bank.as_ref()
    }

    /// Feature image for one window; clips at other rates are resampled first
    /// and the original rate is recorded in the provenance.
    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureImage> {
        let target = self.config.sample_rate();
        let (clip, resampled_from_hz) = if clip.sample_rate != target {
            (
                std::borrow::Cow::Owned(resample(clip, target)?),
                Some(clip.sample_rate),
            )
        } else {
            (std::borrow::Cow::Borrowed(clip), None)
        };
        let provenance = Provenance {
            frontend: self.config.frontend.name().to_string(),
            config_hash: self.hash.clone(),
            source_file: (!clip.source.is_empty()).then(|| clip.source.clone()),
            resampled_from_hz,
            label: clip.label,
            config: None,
        };
        let size = (self.config.height, self.config.width);
        match &self.bank {
            Some(bank) => compute_cochleagram(
                &clip,
                bank,
                &self.config.framing,
                &self.config.compression,
                size,
                provenance,
            ),
            None => compute_mfcc_image(&clip, &self.config.framing, &self.config.mfcc, size, provenance),
        }
    }
}
