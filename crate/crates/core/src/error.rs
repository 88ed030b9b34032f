use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("label {0} is not 0 (spoof) or 1 (live)")]
    InvalidLabel(f64),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    ParameterShape { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("not a weight file (bad magic {0:?})")]
    BadMagic([u8; 4]),

    #[error("unsupported weight file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("weight file truncated: {0}")]
    Truncated(String),

    #[error("malformed weight file: {0}")]
    Malformed(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("dataset has a single class ({0}); both live and spoof samples are required")]
    SingleClass(&'static str),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by input data rather than model weights.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Dataset(_) | Error::SingleClass(_) | Error::Image { .. } | Error::InvalidLabel(_)
        ) || matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }

    /// True when a weight file's header is not one this build can read.
    pub fn is_version_error(&self) -> bool {
        matches!(self, Error::BadMagic(_) | Error::UnsupportedVersion { .. })
    }

    /// True for weight-file and architecture-compatibility errors.
    pub fn is_model_error(&self) -> bool {
        matches!(
            self,
            Error::MissingParameter(_)
                | Error::ParameterShape { .. }
                | Error::BadMagic(_)
                | Error::UnsupportedVersion { .. }
                | Error::Truncated(_)
                | Error::Malformed(_)
                | Error::NonFiniteGradient(_)
        )
    }
}
