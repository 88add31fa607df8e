//! ERB-spaced gammatone filterbank realised as peak-normalised FIR kernels.

use std::f64::consts::PI;
use std::io::Write;

use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::convolve::OverlapSave;
use super::erb::{erb_bandwidth, erb_rate, inverse_erb_rate};
use super::gammatone::{gammatone_impulse_response, GammatoneSpec};
use crate::error::{Error, Result};

/// Ratio between the gamma decay rate `b` and ERB(fc) for a 4th-order filter.
pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 1.019;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterbankConfig {
    pub num_filters: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: f64,
    pub order: u32,
    pub fir_length: usize,
    pub bandwidth_factor: f64,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self {
            num_filters: 64,
            f_min: 50.0,
            f_max: 8000.0,
            sample_rate: 16000.0,
            order: 4,
            fir_length: 2048,
            bandwidth_factor: DEFAULT_BANDWIDTH_FACTOR,
        }
    }
}

impl FilterbankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_filters < 1 {
            return Err(Error::Config("num_filters must be >= 1".into()));
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate / 2.0) {
            return Err(Error::Config(format!(
                "need 0 < f_min < f_max <= sample_rate/2, got f_min={} f_max={} sample_rate={}",
                self.f_min, self.f_max, self.sample_rate
            )));
        }
        if self.order < 1 {
            return Err(Error::Config("order must be >= 1".into()));
        }
        if self.fir_length < 2 {
            return Err(Error::Config("fir_length must be >= 2".into()));
        }
        if !(self.bandwidth_factor > 0.0) {
            return Err(Error::Config("bandwidth_factor must be > 0".into()));
        }
        Ok(())
    }
}

/// `num_filters` frequencies uniformly spaced on the ERB-rate scale, endpoints included.
pub fn center_frequencies(config: &FilterbankConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = config.num_filters;
    if n == 1 {
        return Ok(vec![config.f_min]);
    }
    let lo = erb_rate(config.f_min)?;
    let hi = erb_rate(config.f_max)?;
    let step = (hi - lo) / (n - 1) as f64;
    let mut freqs = (0..n)
        .map(|i| inverse_erb_rate(lo + step * i as f64))
        .collect::<Result<Vec<_>>>()?;
    // Pin the endpoints exactly rather than trusting the log/pow roundtrip.
    freqs[0] = config.f_min;
    freqs[n - 1] = config.f_max;
    Ok(freqs)
}

/// Magnitude of the DFT of `kernel` zero-padded to `2 (n_points - 1)` samples,
/// giving `n_points` bins evenly covering `[0, sample_rate / 2]`.
pub fn frequency_response(kernel: &[f64], n_points: usize) -> Result<Vec<f64>> {
    if n_points < kernel.len() || n_points < 2 {
        return Err(Error::Shape(format!(
            "n_points ({n_points}) must be >= kernel length ({}) and >= 2",
            kernel.len()
        )));
    }
    let fft_len = 2 * (n_points - 1);
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let mut buf = vec![0.0; fft_len];
    buf[..kernel.len()].copy_from_slice(kernel);
    let mut spec = fft.make_output_vec();
    fft.process(&mut buf, &mut spec)
        .expect("fft length fixed at plan time");
    Ok(spec.iter().map(|c| c.norm()).collect())
}

/// |H(f)| of an FIR kernel evaluated directly from the DTFT sum.
pub(crate) fn dtft_magnitude(kernel: &[f64], freq: f64, sample_rate: f64) -> f64 {
    let w = 2.0 * PI * freq / sample_rate;
    let (mut re, mut im) = (0.0, 0.0);
    for (k, &h) in kernel.iter().enumerate() {
        let (s, c) = (w * k as f64).sin_cos();
        re += h * c;
        im -= h * s;
    }
    re.hypot(im)
}

/// Continuous-frequency peak of |H(f)| on `[0, sample_rate/2]`: grid search on a
/// zero-padded FFT followed by golden-section refinement around the best bin.
pub(crate) fn peak_response(kernel: &[f64], sample_rate: f64) -> (f64, f64) {
    let n_points = (8 * kernel.len()).next_power_of_two() + 1;
    let grid = frequency_response(kernel, n_points).expect("n_points exceeds kernel length");
    let bin_hz = sample_rate / 2.0 / (n_points - 1) as f64;
    let best = grid
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    let mut lo = (best as f64 - 1.0).max(0.0) * bin_hz;
    let mut hi = ((best as f64 + 1.0) * bin_hz).min(sample_rate / 2.0);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mag = |f: f64| dtft_magnitude(kernel, f, sample_rate);
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (mag(a), mag(b));
    while hi - lo > 1e-7 * sample_rate {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = mag(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = mag(a);
        }
    }
    let candidates = [(grid[best], best as f64 * bin_hz), (fa, a), (fb, b)];
    let (peak, freq) = candidates
        .into_iter()
        .fold((f64::MIN, 0.0), |acc, c| if c.0 > acc.0 { c } else { acc });
    (freq, peak)
}

/// An immutable bank of gammatone FIR kernels sorted by ascending centre frequency.
#[derive(Debug)]
pub struct Filterbank {
    specs: Vec<GammatoneSpec>,
    kernels: Vec<Vec<f64>>,
    config: FilterbankConfig,
    convolver: OverlapSave,
}

pub fn build_filterbank(config: &FilterbankConfig) -> Result<Filterbank> {
    let freqs = center_frequencies(config)?;
    let fs = config.sample_rate;

    let b_min = config.bandwidth_factor * erb_bandwidth(freqs[0])?;
    let required = 3.0 * (config.order as f64 - 1.0) / (2.0 * PI * b_min);
    let available = config.fir_length as f64 / fs;
    if available < required {
        return Err(Error::Config(format!(
            "fir_length {} ({:.1} ms) is too short for the {:.1} Hz filter: its envelope peaks at \
             {:.1} ms and needs at least {:.1} ms ({} samples) to capture the peak and decay",
            config.fir_length,
            available * 1e3,
            freqs[0],
            required / 3.0 * 1e3,
            required * 1e3,
            (required * fs).ceil() as usize
        )));
    }

    let mut specs = Vec::with_capacity(freqs.len());
    let mut kernels = Vec::with_capacity(freqs.len());
    for fc in freqs {
        let spec = GammatoneSpec {
            center_hz: fc,
            order: config.order,
            bandwidth_hz: config.bandwidth_factor * erb_bandwidth(fc)?,
            phase: 0.0,
            amplitude: 1.0,
        };
        let mut kernel = gammatone_impulse_response(&spec, fs, config.fir_length)?;
        let (_, peak) = peak_response(&kernel, fs);
        if !(peak > 0.0) {
            return Err(Error::Config(format!("filter at {fc} Hz has no passband")));
        }
        kernel.iter_mut().for_each(|h| *h /= peak);
        specs.push(spec);
        kernels.push(kernel);
    }
    let convolver = OverlapSave::new(&kernels);
    Ok(Filterbank {
        specs,
        kernels,
        config: config.clone(),
        convolver,
    })
}

impl Filterbank {
    pub fn specs(&self) -> &[GammatoneSpec] {
        &self.specs
    }

    pub fn kernels(&self) -> &[Vec<f64>] {
        &self.kernels
    }

    pub fn config(&self) -> &FilterbankConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.config.sample_rate
    }

    pub fn center_frequencies(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.center_hz).collect()
    }

    /// Filters `signal` through every kernel; row `k` is the causal,
    /// input-length convolution with kernel `k`.
    pub fn apply(&self, signal: &[f64]) -> Result<Vec<Vec<f64>>> {
        if signal.is_empty() {
            return Err(Error::Empty("signal"));
        }
        Ok(self.convolver.apply(signal))
    }

    /// One CSV row per filter: centre frequency, bandwidth, order, then the taps.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "center_hz,bandwidth_hz,order")?;
        for k in 0..self.config.fir_length {
            write!(out, ",h{k}")?;
        }
        writeln!(out)?;
        for (spec, kernel) in self.specs.iter().zip(&self.kernels) {
            write!(out, "{},{},{}", spec.center_hz, spec.bandwidth_hz, spec.order)?;
            for h in kernel {
                write!(out, ",{h:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn apply_filterbank(signal: &[f64], bank: &Filterbank) -> Result<Vec<Vec<f64>>> {
    bank.apply(signal)
}
