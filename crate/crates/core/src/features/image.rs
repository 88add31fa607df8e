//! Normalised, resized three-channel feature images and their on-disk form.
//!
//! A feature file is a pair: `<stem>.f32` holding `height * width * 3`
//! little-endian `f32` values in row-major, channel-last order, and
//! `<stem>.json` describing it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Scales `values` to `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
        .collect()
}

/// Corner-aligned bilinear resampling of a row-major `rows x cols` map.
pub fn bilinear_resize(values: &[f64], rows: usize, cols: usize, height: usize, width: usize) -> Vec<f64> {
    let coord = |i: usize, out: usize, input: usize| -> (usize, usize, f64) {
        if out <= 1 || input <= 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (input - 1) as f64 / (out - 1) as f64;
        let lo = (pos.floor() as usize).min(input - 1);
        let hi = (lo + 1).min(input - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        let (r0, r1, fy) = coord(i, height, rows);
        for j in 0..width {
            let (c0, c1, fx) = coord(j, width, cols);
            let top = values[r0 * cols + c0] * (1.0 - fx) + values[r0 * cols + c1] * fx;
            let bottom = values[r1 * cols + c0] * (1.0 - fx) + values[r1 * cols + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Min-max normalisation followed by bilinear resize to `height x width`.
pub fn normalize_resize(
    values: &[f64],
    rows: usize,
    cols: usize,
    height: usize,
    width: usize,
) -> Result<Vec<f64>> {
    if values.is_empty() || rows == 0 || cols == 0 {
        return Err(Error::Empty("map"));
    }
    if values.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} values for a {rows}x{cols} map",
            values.len()
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::Shape("output size must be non-zero".into()));
    }
    let normalized = min_max_normalize(values);
    let resized = bilinear_resize(&normalized, rows, cols, height, width);
    Ok(resized.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Where a feature image came from; serialised as the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub frontend: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resampled_from_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    height: usize,
    width: usize,
    channels: usize,
    #[serde(flatten)]
    provenance: Provenance,
}

/// `height x width x 3` intensities in `[0, 1]`, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub provenance: Provenance,
}

impl FeatureImage {
    /// Replicates a single-channel row-major plane into three identical channels.
    pub fn from_plane(plane: &[f64], height: usize, width: usize, provenance: Provenance) -> Result<Self> {
        if plane.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} image",
                plane.len()
            )));
        }
        let pixels = plane
            .iter()
            .flat_map(|&v| std::iter::repeat(v as f32).take(CHANNELS))
            .collect();
        Ok(Self {
            height,
            width,
            pixels,
            provenance,
        })
    }

    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.pixels.iter().skip(c).step_by(CHANNELS).copied().collect()
    }

    /// Channel-major (`3 x H x W`) copy for the network.
    pub fn to_chw(&self) -> Vec<f64> {
        (0..CHANNELS)
            .flat_map(|c| self.pixels.iter().skip(c).step_by(CHANNELS).map(|&v| v as f64))
            .collect()
    }

    pub fn tensor_path(stem: &Path) -> PathBuf {
        stem.with_extension("f32")
    }

    pub fn sidecar_path(stem: &Path) -> PathBuf {
        stem.with_extension("json")
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let tensor = Self::tensor_path(stem);
        let bytes: Vec<u8> = self.pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&tensor, bytes).map_err(|e| Error::io(&tensor, e))?;
        let sidecar = Sidecar {
            height: self.height,
            width: self.width,
            channels: CHANNELS,
            provenance: self.provenance.clone(),
        };
        let json = Self::sidecar_path(stem);
        fs::write(&json, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn read_provenance(stem: &Path) -> Result<(usize, usize, Provenance)> {
        let json = Self::sidecar_path(stem);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        if sidecar.channels != CHANNELS {
            return Err(Error::Format(format!(
                "expected {CHANNELS} channels, sidecar says {}",
                sidecar.channels
            )));
        }
        Ok((sidecar.height, sidecar.width, sidecar.provenance))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (height, width, provenance) = Self::read_provenance(stem)?;
        let tensor = Self::tensor_path(stem);
        let bytes = fs::read(&tensor).map_err(|e| Error::io(&tensor, e))?;
        let expected = height * width * CHANNELS * 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{} holds {} bytes, sidecar implies {expected}",
                tensor.display(),
                bytes.len()
            )));
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self {
            height,
            width,
            pixels,
            provenance,
        })
    }

    /// Binary (P5) PGM of channel 0.
    pub fn write_pgm<W: Write>(&self, out: W) -> std::io::Result<()> {
        let plane: Vec<f64> = self.channel(0).into_iter().map(f64::from).collect();
        write_pgm(out, &plane, self.height, self.width)
    }
}

/// 8-bit binary PGM of a row-major plane of values in `[0, 1]`.
pub fn write_pgm<W: Write>(mut out: W, plane: &[f64], height: usize, width: usize) -> std::io::Result<()> {
    write!(out, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = plane
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)
}

/// Stable 64-bit FNV-1a digest, hex-encoded; used to tag feature configs.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn provenance() -> Provenance {
        Provenance {
            frontend: "gammatone".into(),
            config_hash: "abc".into(),
            source_file: Some("x.wav".into()),
            resampled_from_hz: None,
            label: Some(2),
            config: None,
        }
    }

    #[test]
    fn constant_map_is_black() {
        let out = normalize_resize(&[4.0; 12], 3, 4, 5, 5).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_when_already_normalised() {
        let values = vec![0.0, 0.25, 1.0, 0.5, 0.75, 0.1];
        let out = normalize_resize(&values, 2, 3, 2, 3).unwrap();
        assert_eq!(out, values);
    }

    #[test]
    fn bilinear_midpoint() {
        let out = normalize_resize(&[0.0, 1.0, 1.0, 0.0], 2, 2, 3, 3).unwrap();
        assert!((out[4] - 0.5).abs() < 1e-15);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 1.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(normalize_resize(&[], 0, 0, 2, 2), Err(Error::Empty(_))));
    }

    #[test]
    fn save_load_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("clip");
        let plane: Vec<f64> = (0..12).map(|v| v as f64 / 11.0).collect();
        let img = FeatureImage::from_plane(&plane, 3, 4, provenance()).unwrap();
        img.save(&stem).unwrap();
        let back = FeatureImage::load(&stem).unwrap();
        assert_eq!(back, img);
        assert_eq!(img.channel(0), img.channel(2));

        let mut pgm = Vec::new();
        img.write_pgm(&mut pgm).unwrap();
        assert!(pgm.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(pgm.len(), 11 + 12);
        assert_eq!(*pgm.last().unwrap(), 255);

        std::fs::write(FeatureImage::sidecar_path(&stem), b"{ nope").unwrap();
        assert!(FeatureImage::load(&stem).is_err());
    }

    #[test]
    fn chw_layout() {
        let img = FeatureImage::from_plane(&[0.0, 0.5, 1.0, 0.25], 2, 2, provenance()).unwrap();
        let chw = img.to_chw();
        assert_eq!(chw.len(), 12);
        assert_eq!(&chw[..4], &[0.0, 0.5, 1.0, 0.25]);
        assert_eq!(&chw[4..8], &chw[..4]);
    }

    proptest! {
        #[test]
        fn resize_stays_within_input_range(
            values in proptest::collection::vec(-50.0f64..50.0, 12),
            h in 1usize..9, w in 1usize..9,
        ) {
            let norm = min_max_normalize(&values);
            let (lo, hi) = norm.iter().fold((f64::MAX, f64::MIN), |a, &v| (a.0.min(v), a.1.max(v)));
            let out = bilinear_resize(&norm, 3, 4, h, w);
            prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
