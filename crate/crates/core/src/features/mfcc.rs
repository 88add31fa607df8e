//! Mel filterbank energies and the MFCC + delta baseline image.

use std::f64::consts::PI;

use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::framing::{EnergyMap, FramingConfig};
use super::image::{normalize_resize, FeatureImage, Provenance};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub num_mel: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub num_coefficients: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            num_mel: 40,
            f_min: 50.0,
            f_max: 8000.0,
            num_coefficients: 20,
        }
    }
}

/// Triangular filters with unit peaks, centres uniform in mel.
pub struct MelFilterbank {
    centers_hz: Vec<f64>,
    /// `num_mel x num_bins` weights over DFT bins `0..=fft_len/2`.
    weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(num_mel: usize, f_min: f64, f_max: f64, fft_len: usize, sample_rate: f64) -> Result<Self> {
        if num_mel < 2 {
            return Err(Error::Config(format!("num_mel must be >= 2, got {num_mel}")));
        }
        if !(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0) {
            return Err(Error::Config(format!(
                "need 0 <= f_min < f_max <= sample_rate/2, got {f_min}..{f_max} at {sample_rate} Hz"
            )));
        }
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..num_mel + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (num_mel + 1) as f64))
            .collect();
        let num_bins = fft_len / 2 + 1;
        let bin_hz = sample_rate / fft_len as f64;
        let weights = (0..num_mel)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..num_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= left || f >= right {
                            0.0
                        } else if f <= center {
                            (f - left) / (center - left)
                        } else {
                            (right - f) / (right - center)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            centers_hz: edges[1..=num_mel].to_vec(),
            weights,
        })
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, magnitude: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(magnitude).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Per-frame magnitude spectra weighted by a mel filterbank.
pub fn mel_filterbank_energies(
    clip: &AudioClip,
    framing: &FramingConfig,
    num_mel: usize,
    f_min: f64,
    f_max: f64,
) -> Result<EnergyMap> {
    let fs = clip.sample_rate;
    let (window, hop) = framing.in_samples(fs)?;
    let num_frames = framing.num_frames(clip.len(), fs)?;
    let fft_len = window.next_power_of_two();
    let bank = MelFilterbank::new(num_mel, f_min, f_max, fft_len, fs)?;
    let taper = framing.window_shape.weights(window);

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();

    let mut values = vec![0.0; num_mel * num_frames];
    for t in 0..num_frames {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for ((dst, &x), &w) in buf
            .iter_mut()
            .zip(&clip.samples[t * hop..t * hop + window])
            .zip(&taper)
        {
            *dst = x * w;
        }
        fft.process(&mut buf, &mut spec)
            .expect("fft length fixed at plan time");
        let magnitude: Vec<f64> = spec.iter().map(|c| c.norm()).collect();
        for (m, e) in bank.apply(&magnitude).into_iter().enumerate() {
            values[m * num_frames + t] = e;
        }
    }
    Ok(EnergyMap {
        values,
        num_channels: num_mel,
        num_frames,
        frame_rate: fs / hop as f64,
    })
}

/// Orthonormal DCT-II of `input`, first `keep` coefficients.
pub fn dct2(input: &[f64], keep: usize) -> Vec<f64> {
    let n = input.len() as f64;
    (0..keep)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            scale
                * input
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Central temporal difference of each row (edge frames replicated).
pub fn deltas(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|row| {
            let n = row.len();
            if n < 3 {
                return Err(Error::Shape(format!("deltas need >= 3 frames, got {n}")));
            }
            Ok((0..n)
                .map(|t| (row[(t + 1).min(n - 1)] - row[t.saturating_sub(1)]) / 2.0)
                .collect())
        })
        .collect()
}

/// Static MFCCs stacked with their first and second deltas (`3 * num_coefficients` rows).
pub fn mfcc_stack(clip: &AudioClip, framing: &FramingConfig, config: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    if config.num_coefficients == 0 || config.num_coefficients > config.num_mel {
        return Err(Error::Config(format!(
            "num_coefficients must be in 1..={}, got {}",
            config.num_mel, config.num_coefficients
        )));
    }
    let mel = mel_filterbank_energies(clip, framing, config.num_mel, config.f_min, config.f_max)?;
    if mel.num_frames < 3 {
        return Err(Error::Shape(format!(
            "deltas need >= 3 frames, got {}",
            mel.num_frames
        )));
    }
    let mut coeffs = vec![vec![0.0; mel.num_frames]; config.num_coefficients];
    let mut column = vec![0.0; mel.num_channels];
    for t in 0..mel.num_frames {
        for (m, slot) in column.iter_mut().enumerate() {
            *slot = mel.get(m, t).max(LOG_FLOOR).ln();
        }
        for (k, c) in dct2(&column, config.num_coefficients).into_iter().enumerate() {
            coeffs[k][t] = c;
        }
    }
    let d1 = deltas(&coeffs)?;
    let d2 = deltas(&d1)?;
    Ok(coeffs.into_iter().chain(d1).chain(d2).collect())
}

pub fn compute_mfcc_image(
    clip: &AudioClip,
    framing: &FramingConfig,
    config: &MfccConfig,
    out_size: (usize, usize),
    provenance: Provenance,
) -> Result<FeatureImage> {
    let stack = mfcc_stack(clip, framing, config)?;
    let rows = stack.len();
    let cols = stack[0].len();
    let flat: Vec<f64> = stack.into_iter().flatten().collect();
    let (height, width) = out_size;
    let plane = normalize_resize(&flat, rows, cols, height, width)?;
    FeatureImage::from_plane(&plane, height, width, provenance)
}
