use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of one gammatone filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammatoneSpec {
    pub center_hz: f64,
    pub order: u32,
    /// Decay rate `b` of the gamma envelope, in Hz.
    pub bandwidth_hz: f64,
    pub phase: f64,
    pub amplitude: f64,
}

impl GammatoneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_hz > 0.0) {
            return Err(Error::Config(format!(
                "center frequency must be > 0, got {}",
                self.center_hz
            )));
        }
        if self.order < 1 {
            return Err(Error::Config("filter order must be >= 1".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config(format!(
                "bandwidth must be > 0, got {}",
                self.bandwidth_hz
            )));
        }
        Ok(())
    }

    /// Time in seconds at which the envelope `t^(n-1) e^(-2 pi b t)` peaks.
    pub fn envelope_peak_time(&self) -> f64 {
        (self.order as f64 - 1.0) / (2.0 * PI * self.bandwidth_hz)
    }
}

/// Samples `a t^(n-1) e^(-2 pi b t) cos(2 pi fc t + phi)` at `t = k / sample_rate`.
///
/// Centre frequencies up to and including Nyquist are accepted; anything
/// above it cannot be represented and is rejected.
pub fn gammatone_impulse_response(spec: &GammatoneSpec, sample_rate: f64, length: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::Config("impulse response length must be >= 1".into()));
    }
    if !(sample_rate > 0.0) || spec.center_hz > sample_rate / 2.0 {
        return Err(Error::Aliasing {
            fc: spec.center_hz,
            sample_rate,
        });
    }
    let power = spec.order as i32 - 1;
    let response = (0..length)
        .map(|k| {
            let t = k as f64 / sample_rate;
            spec.amplitude
                * t.powi(power)
                * (-2.0 * PI * spec.bandwidth_hz * t).exp()
                * (2.0 * PI * spec.center_hz * t + spec.phase).cos()
        })
        .collect();
    Ok(response)
}
