//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry: near-field source coincides with microphone {mic_index}")]
    DegenerateGeometry { mic_index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("beamformer: constraint infeasible at bin {bin} (lambda reached {lambda:.3e})")]
    InfeasibleBin { bin: usize, lambda: f64 },

    #[error("beamformer channel {channel}: {source}")]
    BankChannel {
        channel: usize,
        source: Box<Error>,
    },

    #[error("room: {0}")]
    InvalidRoom(String),

    #[error("sample-rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: f64, right: f64 },

    #[error("scene placement failed: {0}")]
    PlacementFailure(String),

    #[error("overlap target {ratio} infeasible for the given timeline")]
    InfeasibleOverlap { ratio: f64 },

    #[error("missing asset: {0}")]
    MissingAsset(String),

    #[error("missing estimates for {count} scene(s): {scenes:?}")]
    MissingEstimates { count: usize, scenes: Vec<String> },

    #[error("audio too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("refinement aborted: non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from invalid user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGeometry(_)
                | Error::InvalidArgument(_)
                | Error::InvalidRoom(_)
                | Error::ShapeMismatch { .. }
                | Error::SampleRateMismatch { .. }
        )
    }
}
