use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("aliasing: center frequency {fc} Hz is not below Nyquist for {sample_rate} Hz")]
    Aliasing { fc: f64, sample_rate: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "sample rate mismatch: clip is {clip} Hz but the filterbank expects {expected} Hz; resample first"
    )]
    SampleRateMismatch { clip: f64, expected: f64 },

    #[error("negative energy {value} at channel {channel}, frame {frame}")]
    NegativeEnergy {
        channel: usize,
        frame: usize,
        value: f64,
    },

    #[error("malformed WAV file: {0}")]
    MalformedWav(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedWav(String),

    #[error("WAV file contains no sample frames")]
    EmptyWav,

    #[error("label error: {0}")]
    Label(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("{0}")]
    Undefined(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
