use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("row_softmax: row {row} has no unmasked entries")]
    DegenerateRow { row: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// Wraps an error raised inside a named model stage.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("extent overflow: {0}")]
    ExtentOverflow(String),

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dataset has no labeled pixels")]
    EmptyDataset,

    #[error("split: {0}")]
    Split(String),

    #[error("non-finite loss {value} at epoch {epoch}, step {step} (sample {sample})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        sample: usize,
        value: f64,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for malformed input files and datasets.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::UnsupportedDtype(_)
                | Error::Truncated { .. }
                | Error::ExtentOverflow(_)
                | Error::TrailingBytes(_)
                | Error::InvalidData(_)
                | Error::EmptyDataset
                | Error::Split(_)
                | Error::Io(_)
        )
    }

    /// True for numeric failures during training or evaluation.
    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self.root(),
            Error::NonFiniteLoss { .. } | Error::DegenerateRow { .. }
        )
    }
}
