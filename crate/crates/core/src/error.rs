use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("row {row} has near-zero norm {norm:e}")]
    ZeroNormRow { row: usize, norm: f64 },

    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),

    #[error("epoch {epoch} out of range for a {total}-epoch schedule")]
    BadEpoch { epoch: usize, total: usize },

    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("non-finite similarity at ({row}, {col})")]
    NonFiniteSimilarity { row: usize, col: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("incomplete coarse map: {0}")]
    IncompleteCoarseMap(String),

    #[error("need at least {need} points, got {n}")]
    TooFewPoints { n: usize, need: usize },

    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("numerical failure at epoch {epoch}, batch {batch}: {msg}")]
    Numerical {
        epoch: usize,
        batch: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
