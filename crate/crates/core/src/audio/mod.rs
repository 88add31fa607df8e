//! Audio ingestion, resampling, segmentation and the synthetic vessel corpus.

pub mod clip;
pub mod dataset;
pub mod resample;
pub mod synth;
pub mod wav;

pub use clip::{segment, AudioClip};
pub use dataset::{
    load_split, make_dataset, synth_corpus, CorpusItem, DatasetManifest, ManifestEntry, Split,
};
pub use resample::resample;
pub use synth::{
    default_profiles, synth_vessel, synth_vessel_components, VesselClassProfile, CLASS_NAMES, NUM_CLASSES,
};
pub use wav::{read_wav, write_wav, WavEncoding};
