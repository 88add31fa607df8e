//! Gammatone filterbank design and application.

pub mod convolve;
pub mod erb;
pub mod filterbank;
pub mod gammatone;

pub use erb::{erb_bandwidth, erb_rate, inverse_erb_rate};
pub use filterbank::{
    apply_filterbank, build_filterbank, center_frequencies, frequency_response, Filterbank, FilterbankConfig,
};
pub use gammatone::{gammatone_impulse_response, GammatoneSpec};
