use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EmnError>;

#[derive(Debug, Error)]
pub enum EmnError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("label {label} out of range for {class_count} classes")]
    LabelRange { label: i64, class_count: usize },

    #[error("memory not trained: node {node}, class {class} has never been updated")]
    NotTrained { node: usize, class: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("bad magic bytes {found:02x?}, expected \"EMNF\"")]
    Magic { found: [u8; 4] },

    #[error("unsupported EMNF version {0}")]
    Version(u16),

    #[error("truncated input: {0}")]
    Truncation(String),

    #[error("unsupported model schema version {found} (supported: {supported})")]
    SchemaVersion { found: u64, supported: u64 },

    #[error("model checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Integrity { stored: u32, computed: u32 },

    #[error("malformed model document: {0}")]
    Model(String),

    #[error("dataset has no labels")]
    MissingLabels,

    #[error("class count mismatch: model has {model}, dataset has {dataset}")]
    ClassCountMismatch { model: usize, dataset: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EmnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EmnError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, actual: usize, context: &'static str) -> Self {
        EmnError::Dimension {
            expected,
            actual,
            context,
        }
    }
}
