use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("parameter sets differ: {0}")]
    ParamMismatch(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("index {index} out of range ({len})")]
    OutOfRange { index: usize, len: usize },

    #[error("search budget exceeded: {0} sequences")]
    Budget(u128),

    #[error("malformed episode: {0}")]
    Episode(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
