//! Equivalent rectangular bandwidth and the ERB-rate scale.

use crate::error::{Error, Result};

const ERB_SLOPE: f64 = 4.37e-3;
const ERB_BASE_HZ: f64 = 24.7;
const ERB_RATE_SCALE: f64 = 21.4;

/// Equivalent rectangular bandwidth, in Hz, of the auditory filter centred at `fc`.
pub fn erb_bandwidth(fc: f64) -> Result<f64> {
    if !(fc >= 0.0) {
        return Err(Error::Domain(format!("center frequency must be >= 0, got {fc}")));
    }
    Ok(ERB_BASE_HZ * (ERB_SLOPE * fc + 1.0))
}

/// Number of ERBs below `f` (the ERB-rate, or "Cam", scale).
pub fn erb_rate(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::Domain(format!("frequency must be >= 0, got {f}")));
    }
    Ok(ERB_RATE_SCALE * (ERB_SLOPE * f + 1.0).log10())
}

/// Frequency in Hz at ERB-rate `e`; exact inverse of [`erb_rate`].
pub fn inverse_erb_rate(e: f64) -> Result<f64> {
    if !(e >= 0.0) {
        return Err(Error::Domain(format!("ERB-rate must be >= 0, got {e}")));
    }
    Ok((10f64.powf(e / ERB_RATE_SCALE) - 1.0) / ERB_SLOPE)
}
