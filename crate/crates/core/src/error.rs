use std::path::PathBuf;

/// Errors produced anywhere in the crack pipeline.
///
/// Variants are grouped by class; [`Error::class`] maps each one onto the
/// coarse category the command-line front end turns into an exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("model file has bad magic bytes (expected {expected:?})")]
    BadMagic { expected: String },

    #[error("model file version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("model file truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("model file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("model header is invalid: {0}")]
    Header(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("ensemble member {index} (seed {seed}): {source}")]
    Member {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Shape,
    Numeric,
    Dataset,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Shape(_) | Error::Bounds(_) | Error::State(_) => ErrorClass::Shape,
            Error::Config(_) => ErrorClass::Config,
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Dataset(_) | Error::Measurement(_) => ErrorClass::Dataset,
            Error::Format(_)
            | Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::Checksum { .. }
            | Error::Header(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Serde(_)
            | Error::Csv(_) => ErrorClass::Io,
            Error::Member { source, .. } => source.class(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
