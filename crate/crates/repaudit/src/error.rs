use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("empty prior: {0} contains no usable word/count lines")]
    EmptyPrior(PathBuf),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("calibration words absent from {0}")]
    CalibrationMassMissing(String),

    #[error("prior too small relative to dominant word `{0}`: non-positive odds denominator")]
    PriorTooSmall(String),

    #[error("no constant in the search interval suppresses all calibration words; still significant: {0:?}")]
    CalibrationFailed(Vec<String>),

    #[error("empty embedding set `{0}`: no input word is in the vocabulary")]
    EmptyEmbeddingSet(String),

    #[error("embedding file {path}: {message}")]
    Embedding { path: PathBuf, message: String },

    #[error("degenerate sample for t-test: {0}")]
    DegenerateSample(String),

    #[error("unknown category `{0}` requested")]
    UnknownCategory(String),

    #[error("missing upstream artifact for stage `{stage}`: {path}")]
    MissingStage { stage: String, path: PathBuf },

    #[error(transparent)]
    Client(#[from] ClientError),

    #[error("{0}")]
    Invalid(String),
}

/// Errors raised by completion clients.
#[derive(Debug, Error)]
pub enum ClientError {
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),

    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("response did not match expected shape at `{0}`")]
    BadResponse(String),

    #[error("request template is not valid JSON after substitution: {0}")]
    BadRequestTemplate(String),
}

impl ClientError {
    /// Transient failures are retried; everything else surfaces immediately.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Http { status, .. } => *status == 429 || *status >= 500,
            ClientError::Transport(_) => true,
            _ => false,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
