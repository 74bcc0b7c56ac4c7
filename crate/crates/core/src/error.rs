use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("event ({x}, {y}) outside {width}x{height} geometry")]
    OutOfGeometry {
        x: u64,
        y: u64,
        width: u32,
        height: u32,
    },

    #[error("invalid polarity {0} (expected 0 or 1)")]
    Polarity(u64),

    #[error("event at t={t}us not before stream duration {duration}us")]
    OutOfHorizon { t: u64, duration: u64 },

    #[error("trailing partial record: {0} bytes left over")]
    PartialRecord(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
