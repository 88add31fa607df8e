//! Labelled corpora: stratified splits, WAV layout on disk and JSONL manifests.
//!
//! On disk a dataset directory holds `manifest.json` (seed, split fractions,
//! class profiles), `manifest.jsonl` (one entry per clip) and the audio under
//! `data/<class_name>/<seed>_<idx>.wav`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{synth_vessel_components, VesselClassProfile, NUM_CLASSES};
use super::wav::{read_wav, write_wav, WavEncoding};
use super::AudioClip;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "manifest.json";
pub const MANIFEST_ENTRIES: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest directory.
    pub path: String,
    pub class_id: u8,
    pub split: Split,
    pub duration: f64,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub profiles: Vec<VesselClassProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

pub fn validate_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|&f| !(f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be >= 0 and sum to 1"
        )));
    }
    Ok(())
}

/// Largest-remainder allocation of `n` items to the three splits.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }
    [counts[0], counts[1], counts[2]]
}

/// Per-clip seed derived from the corpus seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, class_id: u8, index: usize) -> u64 {
    let stream = (class_id as u64)
        .wrapping_mul(1_000_003)
        .wrapping_add(index as u64)
        .wrapping_add(1);
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stream));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stratified split assignment for `per_class` clips of one class, indexed by clip.
pub fn assign_splits(class_id: u8, per_class: usize, fractions: [f64; 3], seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..per_class).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, class_id, usize::MAX));
    order.shuffle(&mut rng);
    let [train, val, _] = split_counts(per_class, fractions);
    let mut splits = vec![Split::Test; per_class];
    for (rank, &idx) in order.iter().enumerate() {
        splits[idx] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// One synthesized clip with its split and metadata.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub clip: AudioClip,
    pub split: Split,
    pub snr_db: f64,
    pub index: usize,
}

/// In-memory corpus: `per_class` clips for every profile, in profile-then-index order.
pub fn synth_corpus(
    profiles: &[VesselClassProfile],
    per_class: usize,
    duration: f64,
    sample_rate: f64,
    seed: u64,
    fractions: [f64; 3],
) -> Result<Vec<CorpusItem>> {
    if per_class < 1 {
        return Err(Error::Config("per_class must be >= 1".into()));
    }
    validate_fractions(fractions)?;
    let mut items = Vec::with_capacity(profiles.len() * per_class);
    for profile in profiles {
        let splits = assign_splits(profile.class_id, per_class, fractions, seed);
        for (index, split) in splits.into_iter().enumerate() {
            let out = synth_vessel_components(
                profile,
                duration,
                sample_rate,
                derive_seed(seed, profile.class_id, index),
            )?;
            items.push(CorpusItem {
                clip: out.clip,
                split,
                snr_db: out.snr_db,
                index,
            });
        }
    }
    Ok(items)
}

/// Writes the corpus as 16-bit WAV files plus manifest into `out_dir`.
pub fn make_dataset(
    out_dir: &Path,
    profiles: &[VesselClassProfile],
    per_class: usize,
    duration: f64,
    sample_rate: f64,
    seed: u64,
    fractions: [f64; 3],
) -> Result<DatasetManifest> {
    let items = synth_corpus(profiles, per_class, duration, sample_rate, seed, fractions)?;
    let mut entries = Vec::with_capacity(items.len());
    for item in &items {
        let class_id = item.clip.label.expect("synthesized clips are labelled");
        let name = &profiles
            .iter()
            .find(|p| p.class_id == class_id)
            .expect("label comes from a profile")
            .name;
        let rel = format!("data/{name}/{seed}_{}.wav", item.index);
        let path = out_dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_wav(&path, &item.clip, WavEncoding::Pcm16)?;
        entries.push(ManifestEntry {
            path: rel,
            class_id,
            split: item.split,
            duration: item.clip.duration(),
            snr_db: item.snr_db,
        });
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            seed,
            fractions,
            profiles: profiles.to_vec(),
        },
        entries,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = dir.join(MANIFEST_HEADER);
        fs::write(&header, serde_json::to_vec_pretty(&self.header)?).map_err(|e| Error::io(&header, e))?;
        let lines = dir.join(MANIFEST_ENTRIES);
        let file = fs::File::create(&lines).map_err(|e| Error::io(&lines, e))?;
        let mut out = BufWriter::new(file);
        for entry in &self.entries {
            serde_json::to_writer(&mut out, entry)?;
            out.write_all(b"\n").map_err(|e| Error::io(&lines, e))?;
        }
        out.flush().map_err(|e| Error::io(&lines, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join(MANIFEST_HEADER);
        let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: ManifestHeader = serde_json::from_str(&text)?;
        validate_fractions(header.fractions)?;
        let lines = dir.join(MANIFEST_ENTRIES);
        let file = fs::File::open(&lines).map_err(|e| Error::io(&lines, e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&lines, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)?;
            if entry.class_id as usize >= NUM_CLASSES {
                return Err(Error::Label(format!(
                    "{}: class id {} out of range",
                    entry.path, entry.class_id
                )));
            }
            entries.push(entry);
        }
        Ok(Self { header, entries })
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn resolve(dir: &Path, entry: &ManifestEntry) -> PathBuf {
    dir.join(&entry.path)
}

/// Clips of `split` in manifest order, labelled.
pub fn load_split(manifest: &DatasetManifest, dir: &Path, split: Split) -> Result<Vec<AudioClip>> {
    manifest
        .entries_for(split)
        .map(|entry| {
            let path = resolve(dir, entry);
            if !path.exists() {
                return Err(Error::MissingFile(path));
            }
            let mut clip = read_wav(&path)?;
            clip.label = Some(entry.class_id);
            clip.source = entry.path.clone();
            Ok(clip)
        })
        .collect()
}
