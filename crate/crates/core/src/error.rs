use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("patch out of bounds: {0}")]
    OutOfBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid depth {value} at index {index}: depths must be positive and finite")]
    InvalidDepth { index: usize, value: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("pose sampler has no reference poses")]
    EmptyReferenceSet,
    #[error("unknown feature extractor `{0}`")]
    UnknownExtractor(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config hash mismatch on resume: checkpoint {checkpoint}, current {current}")]
    ConfigHashMismatch { checkpoint: String, current: String },
    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFinite { step: usize, diagnostics: String },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
