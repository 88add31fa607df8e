use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, err: hound::Error, reading: bool) -> Error {
    match err {
        hound::Error::IoError(e) if e.kind() == ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        // The file opened, so a short or failed read means the container is broken.
        hound::Error::IoError(e) if reading && e.kind() != ErrorKind::PermissionDenied => {
            Error::MalformedWav(format!("{}: {e}", path.display()))
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::MalformedWav(format!("{}: {msg}", path.display())),
        hound::Error::UnfinishedSample => {
            Error::MalformedWav(format!("{}: truncated sample data", path.display()))
        }
        other => Error::UnsupportedWav(format!("{}: {other}", path.display())),
    }
}

/// Reads 16-bit PCM or 32-bit float WAV, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e, true))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (format, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{}: {bits}-bit {format:?} (only 16-bit PCM and 32-bit float are read)",
                path.display()
            )))
        }
    }
    .map_err(|e| map_hound(path, e, true))?;

    if interleaved.len() < channels {
        return Err(Error::EmptyWav);
    }
    let mut samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate as f64,
        label: None,
        source: path.display().to_string(),
    })
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate.round() as u32,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e, false))?;
    for &s in &clip.samples {
        let res = match encoding {
            WavEncoding::Pcm16 => writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
            WavEncoding::Float32 => writer.write_sample(s as f32),
        };
        res.map_err(|e| map_hound(path, e, false))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e, false))
}
