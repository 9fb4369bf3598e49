use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid crop: {0}")]
    InvalidCrop(String),
    #[error("invalid region of interest: {0}")]
    InvalidRoi(String),
    #[error("invalid distortion: {0}")]
    InvalidDistortion(String),
    #[error("image {width}x{height} is smaller than the {min}x{min} minimum for quality features")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
    #[error("png codec: {0}")]
    Png(String),
    #[error("invalid training input: {0}")]
    Training(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("illegal transition: cannot {op} a case in state {state}")]
    IllegalTransition { op: &'static str, state: String },
    #[error("not authorized: {0}")]
    Unauthorized(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
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
