use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label value {0} is outside [0, 1]")]
    InvalidLabel(f64),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("size mismatch: {what} is {found:?}, expected {expected:?}")]
    SizeMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("image {width}x{height} is smaller than the {patch}x{patch} patch")]
    ImageTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },

    #[error("{path}: unsupported raster format {format}")]
    UnsupportedFormat { path: PathBuf, format: String },

    #[error("no pixels left to evaluate after masking")]
    EmptyEvaluation,

    #[error("AUC is undefined: {positives} positive and {negatives} negative pixels")]
    DegenerateAuc { positives: usize, negatives: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
