use serde::{Deserialize, Serialize};

use super::framing::EnergyMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    /// Gain applied before `log10(1 + alpha * E)`. Only shapes contrast,
    /// since every image is min-max normalised afterwards.
    pub alpha: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { alpha: 1e3 }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `Y = log10(1 + alpha * E)` elementwise.
pub fn log_compress(energy: &EnergyMap, config: &CompressionConfig) -> Result<EnergyMap> {
    config.validate()?;
    let mut values = Vec::with_capacity(energy.values.len());
    for (i, &e) in energy.values.iter().enumerate() {
        if !(e >= 0.0) {
            return Err(Error::NegativeEnergy {
                channel: i / energy.num_frames.max(1),
                frame: i % energy.num_frames.max(1),
                value: e,
            });
        }
        values.push((config.alpha * e).ln_1p() / std::f64::consts::LN_10);
    }
    Ok(EnergyMap {
        values,
        ..energy.clone()
    })
}
