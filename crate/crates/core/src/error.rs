use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A pair `(m, n)` outside the index set `m >= n`.
    #[error("index pair (m={m}, n={n}) violates m >= n")]
    Domain { m: usize, n: usize },

    #[error("index {index} is beyond the transition cache horizon {horizon}")]
    BeyondHorizon { index: usize, horizon: usize },

    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported system kind `{0}`")]
    UnsupportedKind(String),

    #[error("coefficient index {index} is beyond the explicit list of length {len} and no extension rule is declared")]
    OutOfRange { index: usize, len: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(err: &serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
