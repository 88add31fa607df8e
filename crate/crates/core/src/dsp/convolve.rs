//! Overlap-save FFT block convolution with a fixed set of FIR kernels.
//!
//! Every kernel shares the same block spectra of the input, so one forward
//! transform per block serves all channels.

use std::sync::Arc;

use rayon::prelude::*;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

/// Pre-transformed kernels for causal "same"-length convolution.
pub struct OverlapSave {
    kernel_len: usize,
    fft_len: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    spectra: Vec<Vec<Complex<f64>>>,
}

impl std::fmt::Debug for OverlapSave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OverlapSave")
            .field("kernel_len", &self.kernel_len)
            .field("fft_len", &self.fft_len)
            .field("kernels", &self.spectra.len())
            .finish()
    }
}

impl OverlapSave {
    /// All kernels must have the same (non-zero) length.
    pub fn new(kernels: &[Vec<f64>]) -> Self {
        let kernel_len = kernels.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let fft_len = (4 * kernel_len).next_power_of_two().max(256);
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let spectra = kernels
            .iter()
            .map(|k| {
                let mut buf = vec![0.0; fft_len];
                buf[..k.len()].copy_from_slice(k);
                let mut spec = forward.make_output_vec();
                forward
                    .process(&mut buf, &mut spec)
                    .expect("fft length fixed at plan time");
                spec
            })
            .collect();
        Self {
            kernel_len,
            fft_len,
            forward,
            inverse,
            spectra,
        }
    }

    pub fn num_kernels(&self) -> usize {
        self.spectra.len()
    }

    /// Returns one output row per kernel; `out[k][t] = sum_j kernel_k[j] * signal[t - j]`.
    pub fn apply(&self, signal: &[f64]) -> Vec<Vec<f64>> {
        let hop = self.fft_len - self.kernel_len + 1;
        let len = signal.len();
        let num_blocks = len.div_ceil(hop);

        // Block s covers padded[s*hop .. s*hop + fft_len], padded = K-1 zeros ++ signal.
        let blocks: Vec<Vec<Complex<f64>>> = (0..num_blocks)
            .map(|b| {
                let mut buf = vec![0.0; self.fft_len];
                let start = (b * hop) as isize - (self.kernel_len as isize - 1);
                for (i, slot) in buf.iter_mut().enumerate() {
                    let idx = start + i as isize;
                    if idx >= 0 && (idx as usize) < len {
                        *slot = signal[idx as usize];
                    }
                }
                let mut spec = self.forward.make_output_vec();
                self.forward
                    .process(&mut buf, &mut spec)
                    .expect("fft length fixed at plan time");
                spec
            })
            .collect();

        let scale = 1.0 / self.fft_len as f64;
        self.spectra
            .par_iter()
            .map(|kernel_spec| {
                let mut row = vec![0.0; len];
                let mut spec = self.inverse.make_input_vec();
                let mut time = self.inverse.make_output_vec();
                for (b, block) in blocks.iter().enumerate() {
                    for ((s, x), h) in spec.iter_mut().zip(block).zip(kernel_spec) {
                        *s = x * h;
                    }
                    spec[0].im = 0.0;
                    if let Some(last) = spec.last_mut() {
                        last.im = 0.0;
                    }
                    self.inverse
                        .process(&mut spec, &mut time)
                        .expect("fft length fixed at plan time");
                    let out_start = b * hop;
                    let n = hop.min(len - out_start);
                    for (dst, src) in row[out_start..out_start + n]
                        .iter_mut()
                        .zip(&time[self.kernel_len - 1..self.kernel_len - 1 + n])
                    {
                        *dst = src * scale;
                    }
                }
                row
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
        (0..signal.len())
            .map(|t| {
                (0..kernel.len())
                    .filter(|&j| j <= t)
                    .map(|j| kernel[j] * signal[t - j])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (sig_len, ker_len) in [(1000, 37), (1000, 300), (5000, 64), (10, 40)] {
            let signal: Vec<f64> = (0..sig_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let kernels: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..ker_len).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let conv = OverlapSave::new(&kernels);
            let out = conv.apply(&signal);
            for (row, kernel) in out.iter().zip(&kernels) {
                let want = direct(&signal, kernel);
                let err = row
                    .iter()
                    .zip(&want)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-9, "len {sig_len}/{ker_len}: err {err}");
            }
        }
    }
}
