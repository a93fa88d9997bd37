use thiserror::Error;

use crate::audio_io::WavError;
use crate::codec::StreamError;
use crate::model::checkpoint::CheckpointError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ambisonics order {order} is not supported (maximum {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("cannot truncate order {from} to higher order {to}")]
    TruncateUpward { from: usize, to: usize },

    #[error("invalid speaker layout: {0}")]
    InvalidLayout(String),

    #[error("speaker layout is degenerate: singular value ratio {ratio:.3e} below {threshold:.1e}")]
    DegenerateLayout { ratio: f64, threshold: f64 },

    #[error("unknown speaker layout `{0}`")]
    UnknownLayout(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: String, step: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Wav(#[from] WavError),

    #[error(transparent)]
    Stream(#[from] StreamError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::NonFiniteLoss { .. })
    }
}
