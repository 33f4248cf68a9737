use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid header: {0}")]
    Header(String),

    #[error("unknown dtype {0:?}")]
    UnknownDType(String),

    #[error("dtype mismatch: expected {expected}, found {found}")]
    DTypeMismatch { expected: String, found: String },

    #[error("raw data length {actual} bytes does not match dims {dims:?} ({expected} bytes)")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("label {label} at flat index {index} is out of range for {n_classes} classes")]
    LabelOutOfRange { label: u8, index: usize, n_classes: usize },

    #[error("pole ({u}, {v}, {z}) lies outside volume of dims {dims:?}")]
    PoleOutOfBounds {
        u: usize,
        v: usize,
        z: usize,
        dims: [usize; 3],
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("model version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
