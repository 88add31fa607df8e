//! Windowed-sinc polyphase sample-rate conversion.

use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kept on each side of the centre tap.
const ZERO_CROSSINGS: f64 = 32.0;
/// Cutoff as a fraction of the lower of the two Nyquist rates.
const ROLLOFF: f64 = 0.95;
const KAISER_BETA: f64 = 10.0;
/// Above this many phases the table is skipped and taps are computed per output.
const MAX_PHASES: u64 = 4096;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct SincKernel {
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    half_width: f64,
    norm: f64,
}

impl SincKernel {
    fn new(ratio: f64) -> Self {
        let cutoff = 0.5 * ratio.min(1.0) * ROLLOFF;
        Self {
            cutoff,
            half_width: ZERO_CROSSINGS / (2.0 * cutoff),
            norm: bessel_i0(KAISER_BETA),
        }
    }

    fn reach(&self) -> isize {
        self.half_width.ceil() as isize
    }

    fn tap(&self, tau: f64) -> f64 {
        let r = tau / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let x = 2.0 * self.cutoff * tau;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        2.0 * self.cutoff * sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.norm
    }
}

/// Resamples to `target` Hz. Matching rates return an exact copy.
pub fn resample(clip: &AudioClip, target: f64) -> Result<AudioClip> {
    if !(target > 0.0) || !(clip.sample_rate > 0.0) {
        return Err(Error::Config(format!(
            "sample rates must be > 0, got {} -> {target}",
            clip.sample_rate
        )));
    }
    if clip.sample_rate == target {
        return Ok(clip.clone());
    }
    let ratio = target / clip.sample_rate;
    let kernel = SincKernel::new(ratio);
    let reach = kernel.reach();
    let input = &clip.samples;
    let n_in = input.len();
    let n_out = (n_in as f64 * ratio).floor() as usize;

    let convolve = |base: isize, frac: f64, taps: Option<&[f64]>| -> f64 {
        let mut acc = 0.0;
        for (i, j) in (-reach + 1..=reach).enumerate() {
            let idx = base + j;
            if idx < 0 || idx as usize >= n_in {
                continue;
            }
            let w = match taps {
                Some(t) => t[i],
                None => kernel.tap(j as f64 - frac),
            };
            acc += w * input[idx as usize];
        }
        acc
    };

    let integral = clip.sample_rate.fract() == 0.0 && target.fract() == 0.0;
    let samples = if integral {
        // Output m sits at input position m * down / up.
        let (src, dst) = (clip.sample_rate as u64, target as u64);
        let g = gcd(src, dst);
        let (up, down) = (dst / g, src / g);
        if up <= MAX_PHASES {
            let table: Vec<Vec<f64>> = (0..up)
                .map(|p| {
                    let frac = p as f64 / up as f64;
                    (-reach + 1..=reach)
                        .map(|j| kernel.tap(j as f64 - frac))
                        .collect()
                })
                .collect();
            (0..n_out as u64)
                .map(|m| {
                    let num = m * down;
                    convolve((num / up) as isize, 0.0, Some(&table[(num % up) as usize]))
                })
                .collect()
        } else {
            direct(n_out, clip.sample_rate / target, &convolve)
        }
    } else {
        direct(n_out, clip.sample_rate / target, &convolve)
    };

    Ok(AudioClip {
        samples,
        sample_rate: target,
        label: clip.label,
        source: clip.source.clone(),
    })
}

fn direct(n_out: usize, step: f64, convolve: &dyn Fn(isize, f64, Option<&[f64]>) -> f64) -> Vec<f64> {
    (0..n_out)
        .map(|m| {
            let pos = m as f64 * step;
            let base = pos.floor();
            convolve(base as isize, pos - base, None)
        })
        .collect()
}
