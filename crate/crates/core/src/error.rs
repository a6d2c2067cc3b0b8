use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch: manifest says {expected}, blob hashes to {actual}")]
    Checksum { expected: String, actual: String },
    #[error("data: {0}")]
    Data(String),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for command-line use: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::NonFinite { .. } => 3,
            Error::Io(_) | Error::Image(_) | Error::Checkpoint(_) | Error::Checksum { .. } => 4,
            Error::Schedule(_) | Error::Timestep { .. } | Error::Shape(_) | Error::Data(_) => 2,
        }
    }

    /// Short machine-parsable tag used on the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schedule(_) => "schedule",
            Error::Timestep { .. } => "timestep",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "non_finite",
            Error::Checkpoint(_) => "checkpoint",
            Error::Checksum { .. } => "checksum",
            Error::Data(_) => "data",
            Error::Image(_) => "image",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
