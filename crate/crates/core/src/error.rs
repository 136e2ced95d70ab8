use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// Each variant maps onto one of the process exit codes used by the CLI:
/// 2 for configuration problems, 3 for data problems, 4 for numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("degenerate 6d rotation: {0}")]
    Degenerate6d(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid code {code} (codebook size {size})")]
    InvalidCode { code: usize, size: usize },

    #[error("token {token} out of range for vocabulary of {vocab}")]
    Vocab { token: u32, vocab: usize },

    #[error("vocabulary layout error: {0}")]
    Layout(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing prerequisite {what} (expected at {path}); run `{step}` first")]
    MissingPrerequisite { what: String, path: PathBuf, step: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Layout(_)
            | Error::Contract(_)
            | Error::MissingPrerequisite { .. } => 2,
            Error::Numeric(_) | Error::InvalidRotation(_) | Error::Degenerate6d(_) => 4,
            Error::Data(_)
            | Error::Format { .. }
            | Error::Checksum(_)
            | Error::Shape(_)
            | Error::InvalidCode { .. }
            | Error::Vocab { .. }
            | Error::Io { .. } => 3,
        }
    }
}
