//! Gammatone cochleagram: filterbank -> Hilbert envelope -> framed energy ->
//! log compression -> normalised image.

use rayon::prelude::*;

use super::compress::{log_compress, CompressionConfig};
use super::envelope::EnvelopeExtractor;
use super::framing::{frame_energy, EnergyMap, FramingConfig};
use super::image::{normalize_resize, FeatureImage, Provenance};
use crate::audio::AudioClip;
use crate::dsp::Filterbank;
use crate::error::{Error, Result};

/// Channel energies `E[f, t]` before compression.
pub fn cochleagram_energy(clip: &AudioClip, bank: &Filterbank, framing: &FramingConfig) -> Result<EnergyMap> {
    if clip.sample_rate != bank.sample_rate() {
        return Err(Error::SampleRateMismatch {
            clip: clip.sample_rate,
            expected: bank.sample_rate(),
        });
    }
    if clip.is_empty() {
        return Err(Error::Empty("audio clip"));
    }
    let rows = bank.apply(&clip.samples)?;
    let extractor = EnvelopeExtractor::new(clip.len());
    let envelopes = rows
        .par_iter()
        .map(|row| extractor.envelope(row))
        .collect::<Result<Vec<_>>>()?;
    frame_energy(&envelopes, framing, clip.sample_rate)
}

/// Compressed intensity map `Y[f, t]` at native resolution (channels x frames).
pub fn cochleagram_map(
    clip: &AudioClip,
    bank: &Filterbank,
    framing: &FramingConfig,
    compression: &CompressionConfig,
) -> Result<EnergyMap> {
    log_compress(&cochleagram_energy(clip, bank, framing)?, compression)
}

pub fn compute_cochleagram(
    clip: &AudioClip,
    bank: &Filterbank,
    framing: &FramingConfig,
    compression: &CompressionConfig,
    out_size: (usize, usize),
    provenance: Provenance,
) -> Result<FeatureImage> {
    let map = cochleagram_map(clip, bank, framing, compression)?;
    let (height, width) = out_size;
    let plane = normalize_resize(&map.values, map.num_channels, map.num_frames, height, width)?;
    FeatureImage::from_plane(&plane, height, width, provenance)
}
