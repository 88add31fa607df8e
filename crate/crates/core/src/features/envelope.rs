//! Hilbert envelope via the FFT analytic-signal construction.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Reusable forward/inverse plans for one signal length.
pub struct EnvelopeExtractor {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl EnvelopeExtractor {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len.max(1)),
            inverse: planner.plan_fft_inverse(len.max(1)),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// |x + i H{x}| for a channel of exactly `self.len()` samples.
    pub fn envelope(&self, channel: &[f64]) -> Result<Vec<f64>> {
        if channel.is_empty() {
            return Err(Error::Empty("channel"));
        }
        if channel.len() != self.len {
            return Err(Error::Shape(format!(
                "extractor planned for {} samples, got {}",
                self.len,
                channel.len()
            )));
        }
        let n = self.len;
        let mut buf: Vec<Complex<f64>> = channel.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.forward.process(&mut buf);

        // Keep DC (and Nyquist for even n), double positive bins, zero negative bins.
        let positive_end = n.div_ceil(2);
        for c in &mut buf[1..positive_end] {
            *c *= 2.0;
        }
        let negative_start = n / 2 + 1;
        for c in &mut buf[negative_start..] {
            *c = Complex::new(0.0, 0.0);
        }

        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf.iter().map(|c| c.norm() * scale).collect())
    }
}

pub fn analytic_envelope(channel: &[f64]) -> Result<Vec<f64>> {
    EnvelopeExtractor::new(channel.len()).envelope(channel)
}
