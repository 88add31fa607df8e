//! Seeded synthetic vessel-radiated noise.
//!
//! Each clip is a propulsion harmonic series under propeller amplitude
//! modulation, plus band-limited cavitation noise, mixed with 1/f ambient
//! noise at a drawn SNR and peak-normalised.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

pub const CLASS_NAMES: [&str; 5] = ["Background", "Cargo", "Passengership", "Tanker", "Tug"];
pub const NUM_CLASSES: usize = CLASS_NAMES.len();

const PEAK: f64 = 0.9;
/// Below this frequency the ambient spectrum is flat instead of 1/f.
const AMBIENT_CORNER_HZ: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselClassProfile {
    pub class_id: u8,
    pub name: String,
    pub f0_range: (f64, f64),
    pub num_harmonics: usize,
    /// Amplitude ratio between consecutive harmonics.
    pub harmonic_decay: f64,
    pub am_rate_range: (f64, f64),
    pub am_depth: f64,
    pub broadband_band: (f64, f64),
    /// Cavitation power relative to the harmonic power (absolute power when
    /// the profile has no harmonics).
    pub cavitation_level: f64,
    pub snr_range: (f64, f64),
}

impl VesselClassProfile {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let nyquist = sample_rate / 2.0;
        let check = |name: &str, (lo, hi): (f64, f64)| -> Result<()> {
            if !(lo >= 0.0 && lo <= hi && hi <= nyquist) {
                return Err(Error::Config(format!(
                    "{}: {name} [{lo}, {hi}] must be a non-empty interval inside [0, {nyquist}] Hz",
                    self.name
                )));
            }
            Ok(())
        };
        check("f0_range", self.f0_range)?;
        check("am_rate_range", self.am_rate_range)?;
        check("broadband_band", self.broadband_band)?;
        if self.snr_range.0 > self.snr_range.1
            || !self.snr_range.0.is_finite()
            || !self.snr_range.1.is_finite()
        {
            return Err(Error::Config(format!(
                "{}: invalid snr_range {:?}",
                self.name, self.snr_range
            )));
        }
        if self.num_harmonics > 0 && !(self.f0_range.0 > 0.0) {
            return Err(Error::Config(format!("{}: f0 must be > 0", self.name)));
        }
        if (self.class_id as usize) >= NUM_CLASSES {
            return Err(Error::Config(format!(
                "{}: class_id {} out of range",
                self.name, self.class_id
            )));
        }
        Ok(())
    }
}

/// Five-class defaults: noise-only background plus four harmonic vessel types.
pub fn default_profiles() -> Vec<VesselClassProfile> {
    let profile = |class_id: u8,
                   f0_range,
                   num_harmonics,
                   harmonic_decay,
                   am_rate_range,
                   am_depth,
                   broadband_band,
                   cavitation_level| VesselClassProfile {
        class_id,
        name: CLASS_NAMES[class_id as usize].to_string(),
        f0_range,
        num_harmonics,
        harmonic_decay,
        am_rate_range,
        am_depth,
        broadband_band,
        cavitation_level,
        snr_range: (0.0, 15.0),
    };
    vec![
        profile(0, (0.0, 0.0), 0, 0.0, (0.0, 0.0), 0.0, (100.0, 2000.0), 1.0),
        profile(1, (50.0, 80.0), 12, 0.85, (2.0, 4.0), 0.3, (1000.0, 4000.0), 0.3),
        profile(2, (100.0, 160.0), 8, 0.8, (3.0, 6.0), 0.2, (2000.0, 6000.0), 0.3),
        profile(3, (40.0, 60.0), 15, 0.9, (1.0, 3.0), 0.4, (500.0, 3000.0), 0.25),
        profile(4, (70.0, 110.0), 10, 0.85, (4.0, 8.0), 0.8, (300.0, 7000.0), 0.6),
    ]
}

pub fn with_snr_range(profiles: &[VesselClassProfile], snr_range: (f64, f64)) -> Vec<VesselClassProfile> {
    profiles
        .iter()
        .cloned()
        .map(|p| VesselClassProfile { snr_range, ..p })
        .collect()
}

/// A synthesized clip with its separately kept components (same scaling).
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub clip: AudioClip,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
    pub f0: f64,
    pub am_rate: f64,
    pub snr_db: f64,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// White Gaussian noise shaped in the frequency domain by `gain(f)`.
fn shaped_noise(rng: &mut ChaCha8Rng, n: usize, sample_rate: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut buf: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut spec = forward.make_output_vec();
    forward
        .process(&mut buf, &mut spec)
        .expect("fft length fixed at plan time");
    let bin_hz = sample_rate / n as f64;
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= gain(k as f64 * bin_hz);
    }
    spec[0].im = 0.0;
    if n % 2 == 0 {
        if let Some(last) = spec.last_mut() {
            last.im = 0.0;
        }
    }
    inverse
        .process(&mut spec, &mut buf)
        .expect("fft length fixed at plan time");
    buf
}

fn scale_to_power(x: &mut [f64], target: f64) {
    let p = power(x);
    if p > 0.0 {
        let g = (target / p).sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Synthesizes one clip and keeps its signal and noise components.
pub fn synth_vessel_components(
    profile: &VesselClassProfile,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<SynthOutput> {
    if !(duration > 0.0) {
        return Err(Error::Config(format!("duration must be > 0, got {duration}")));
    }
    profile.validate(sample_rate)?;
    let n = (duration * sample_rate).round() as usize;
    if n == 0 {
        return Err(Error::Config("duration rounds to zero samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = draw(&mut rng, profile.f0_range);
    let am_rate = draw(&mut rng, profile.am_rate_range);
    let snr_db = draw(&mut rng, profile.snr_range);
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    let phases: Vec<f64> = (0..profile.num_harmonics)
        .map(|_| rng.gen_range(0.0..2.0 * PI))
        .collect();

    let nyquist = sample_rate / 2.0;
    let mut tonal = vec![0.0; n];
    for (h, phase) in phases.iter().enumerate() {
        let order = (h + 1) as f64;
        let freq = order * f0;
        if freq >= nyquist {
            break;
        }
        let amp = profile.harmonic_decay.powf(order);
        let w = 2.0 * PI * freq / sample_rate;
        for (k, v) in tonal.iter_mut().enumerate() {
            *v += amp * (w * k as f64 + phase).sin();
        }
    }
    if profile.num_harmonics > 0 && profile.am_depth > 0.0 {
        let w = 2.0 * PI * am_rate / sample_rate;
        for (k, v) in tonal.iter_mut().enumerate() {
            *v *= 1.0 + profile.am_depth * (w * k as f64 + am_phase).sin();
        }
    }

    let (lo, hi) = profile.broadband_band;
    let mut cavitation = shaped_noise(&mut rng, n, sample_rate, |f| {
        if f >= lo && f <= hi {
            1.0
        } else {
            0.0
        }
    });
    let tonal_power = power(&tonal);
    let reference = if tonal_power > 0.0 { tonal_power } else { 1.0 };
    scale_to_power(&mut cavitation, profile.cavitation_level * reference);

    let mut signal: Vec<f64> = tonal.iter().zip(&cavitation).map(|(a, b)| a + b).collect();
    let mut noise = shaped_noise(&mut rng, n, sample_rate, |f| {
        if f == 0.0 {
            0.0
        } else {
            1.0 / f.max(AMBIENT_CORNER_HZ).sqrt()
        }
    });
    scale_to_power(&mut noise, power(&signal) / 10f64.powf(snr_db / 10.0));

    let mut mix: Vec<f64> = signal.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        for v in mix.iter_mut().chain(signal.iter_mut()).chain(noise.iter_mut()) {
            *v *= g;
        }
    }

    Ok(SynthOutput {
        clip: AudioClip {
            samples: mix,
            sample_rate,
            label: Some(profile.class_id),
            source: format!("synth:{}:{seed}", profile.name),
        },
        signal,
        noise,
        f0,
        am_rate,
        snr_db,
    })
}

pub fn synth_vessel(
    profile: &VesselClassProfile,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<AudioClip> {
    Ok(synth_vessel_components(profile, duration, sample_rate, seed)?.clip)
}
