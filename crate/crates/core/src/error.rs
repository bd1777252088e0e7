use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("ring overflow: {wraps} azimuth wraps for a sensor with {num_rings} rings")]
    RingOverflow { wraps: usize, num_rings: usize },

    #[error("point {index} has no ring index")]
    MissingRing { index: usize },

    #[error("ring {ring} out of range for a sensor with {num_rings} rings")]
    RingOutOfRange { ring: usize, num_rings: usize },

    #[error("degenerate point: azimuth undefined at the sensor axis")]
    DegeneratePoint,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("frame has no occupied cells")]
    EmptyFrame,

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid seed at ring {ring}, column {column}: cell is unoccupied")]
    InvalidSeed { ring: usize, column: usize },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("no unmasked cells contribute to the loss")]
    EmptyMask,

    #[error("training diverged at iteration {iteration}: loss is {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("model format error: {0}")]
    Format(String),

    #[error("model corruption: {0}")]
    Corruption(String),

    #[error("ground truth has no positive samples under the mask")]
    DegenerateTruth,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
