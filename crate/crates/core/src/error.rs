use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: csv error: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("header does not match schema (missing: [{}], unexpected: [{}])", missing.join(", "), unexpected.join(", "))]
    SchemaMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("{path}: line {line}: expected {expected} cells, found {found}")]
    RowLength {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}: invalid label {value:?} (expected 0 or 1)")]
    InvalidLabel { path: PathBuf, line: u64, value: String },

    #[error("continuous column {0:?} has no non-missing values")]
    EmptyColumn(String),

    #[error("cannot balance files: {0}")]
    Balance(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("feature set mismatch: missing [{}]", .0.join(", "))]
    FeatureMismatch(Vec<String>),

    #[error("unknown feature {0:?}")]
    UnknownFeature(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported format {requested:?}; supported: {}", supported.join(", "))]
    UnsupportedFormat {
        requested: String,
        supported: Vec<&'static str>,
    },

    #[error("{what}: bad magic bytes")]
    BadMagic { what: &'static str },

    #[error("{what}: format version {found} is not supported (max {supported})")]
    Version {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("{what}: checksum mismatch")]
    Checksum { what: &'static str },

    #[error("{what}: file is truncated")]
    Truncated { what: &'static str },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::UnsupportedFormat { .. } => ErrorClass::Usage,
            Error::Shape { .. } | Error::NonFinite(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
