use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowShape {
    Hann,
    Rectangular,
}

impl WindowShape {
    /// Window of `len` strictly positive weights. The Hann variant is sampled
    /// at sample midpoints so that no covered sample gets zero weight.
    pub fn weights(self, len: usize) -> Vec<f64> {
        match self {
            WindowShape::Hann => (0..len)
                .map(|n| (PI * (n as f64 + 0.5) / len as f64).sin().powi(2))
                .collect(),
            WindowShape::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramingConfig {
    /// Seconds.
    pub window_len: f64,
    /// Seconds.
    pub hop: f64,
    pub window_shape: WindowShape,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self {
            window_len: 0.025,
            hop: 0.010,
            window_shape: WindowShape::Hann,
        }
    }
}

impl FramingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop > 0.0 && self.hop <= self.window_len) {
            return Err(Error::Config(format!(
                "need 0 < hop <= window_len, got hop={} window_len={}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }

    /// Window and hop in whole samples.
    pub fn in_samples(&self, sample_rate: f64) -> Result<(usize, usize)> {
        self.validate()?;
        let window = (self.window_len * sample_rate).round() as usize;
        let hop = (self.hop * sample_rate).round() as usize;
        if window == 0 || hop == 0 {
            return Err(Error::Config(format!(
                "framing rounds to zero samples at {sample_rate} Hz"
            )));
        }
        Ok((window, hop))
    }

    pub fn num_frames(&self, len: usize, sample_rate: f64) -> Result<usize> {
        let (window, hop) = self.in_samples(sample_rate)?;
        if len < window {
            return Err(Error::Shape(format!(
                "{len} samples is shorter than one {window}-sample window"
            )));
        }
        Ok((len - window) / hop + 1)
    }
}

/// Non-negative channel-by-frame energy map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMap {
    pub values: Vec<f64>,
    pub num_channels: usize,
    pub num_frames: usize,
    pub frame_rate: f64,
}

impl EnergyMap {
    pub fn get(&self, channel: usize, frame: usize) -> f64 {
        self.values[channel * self.num_frames + frame]
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.num_frames..(channel + 1) * self.num_frames]
    }

    pub fn row_means(&self) -> Vec<f64> {
        (0..self.num_channels)
            .map(|c| self.row(c).iter().sum::<f64>() / self.num_frames as f64)
            .collect()
    }
}

/// Window-weighted mean of each envelope row over every frame.
pub fn frame_energy(
    envelope_rows: &[Vec<f64>],
    framing: &FramingConfig,
    sample_rate: f64,
) -> Result<EnergyMap> {
    let (window, hop) = framing.in_samples(sample_rate)?;
    let Some(first) = envelope_rows.first() else {
        return Err(Error::Empty("envelope rows"));
    };
    let len = first.len();
    if envelope_rows.iter().any(|r| r.len() != len) {
        return Err(Error::Shape("envelope rows differ in length".into()));
    }
    let num_frames = framing.num_frames(len, sample_rate)?;

    let mut weights = framing.window_shape.weights(window);
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut values = Vec::with_capacity(envelope_rows.len() * num_frames);
    for row in envelope_rows {
        for t in 0..num_frames {
            let frame = &row[t * hop..t * hop + window];
            let e: f64 = frame.iter().zip(&weights).map(|(x, w)| x * w).sum();
            values.push(e.max(0.0));
        }
    }
    Ok(EnergyMap {
        values,
        num_channels: envelope_rows.len(),
        num_frames,
        frame_rate: sample_rate / hop as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_window_frame_count() {
        let f = FramingConfig::default();
        assert_eq!(f.in_samples(16000.0).unwrap(), (400, 160));
        assert_eq!(f.num_frames(64000, 16000.0).unwrap(), 398);
    }

    #[test]
    fn constant_envelope_gives_constant_energy() {
        let rows = vec![vec![2.5; 4000], vec![0.0; 4000]];
        let e = frame_energy(&rows, &FramingConfig::default(), 16000.0).unwrap();
        assert_eq!(e.num_channels, 2);
        assert_eq!(e.frame_rate, 100.0);
        for t in 0..e.num_frames {
            assert!((e.get(0, t) - 2.5).abs() < 1e-12);
            assert_eq!(e.get(1, t), 0.0);
        }
    }

    #[test]
    fn single_sample_is_local() {
        let mut row = vec![0.0; 4000];
        let pos = 1234;
        row[pos] = 1.0;
        let framing = FramingConfig::default();
        let e = frame_energy(&[row], &framing, 16000.0).unwrap();
        for t in 0..e.num_frames {
            let covers = t * 160 <= pos && pos < t * 160 + 400;
            assert_eq!(e.get(0, t) > 0.0, covers, "frame {t}");
        }
    }

    #[test]
    fn errors() {
        let framing = FramingConfig::default();
        assert!(matches!(
            frame_energy(&[vec![1.0; 399]], &framing, 16000.0),
            Err(Error::Shape(_))
        ));
        assert!(frame_energy(&[], &framing, 16000.0).is_err());
        let bad = FramingConfig {
            hop: 0.05,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn energy_is_one_homogeneous() {
        let row: Vec<f64> = (0..3000).map(|k| ((k as f64) * 0.37).sin().abs()).collect();
        let scaled: Vec<f64> = row.iter().map(|v| v * 3.0).collect();
        let framing = FramingConfig::default();
        let a = frame_energy(&[row], &framing, 16000.0).unwrap();
        let b = frame_energy(&[scaled], &framing, 16000.0).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((3.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}
