use crate::error::{Error, Result};

/// Mono audio buffer with its sample rate and optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub label: Option<u8>,
    pub source: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
            label: None,
            source: String::new(),
        }
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, &s| m.max(s.abs()))
    }
}

/// Splits `clip` into `window`-second pieces every `hop` seconds
/// (`None` means back-to-back). A trailing partial window is dropped.
pub fn segment(clip: &AudioClip, window: f64, hop: Option<f64>) -> Result<Vec<AudioClip>> {
    if !(window > 0.0) {
        return Err(Error::Config(format!("segment window must be > 0, got {window}")));
    }
    let hop = hop.unwrap_or(window);
    if !(hop > 0.0) {
        return Err(Error::Config(format!("segment hop must be > 0, got {hop}")));
    }
    let win = (window * clip.sample_rate).round() as usize;
    let step = ((hop * clip.sample_rate).round() as usize).max(1);
    if win == 0 || clip.len() < win {
        return Ok(Vec::new());
    }
    let count = (clip.len() - win) / step + 1;
    Ok((0..count)
        .map(|i| AudioClip {
            samples: clip.samples[i * step..i * step + win].to_vec(),
            sample_rate: clip.sample_rate,
            label: clip.label,
            source: format!("{}#{i}", clip.source),
        })
        .collect())
}
