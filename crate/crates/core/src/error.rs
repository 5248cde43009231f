use std::path::PathBuf;

use crate::lm::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("token id {token} is out of range for vocabulary of size {vocab_size}")]
    InvalidToken { token: TokenId, vocab_size: usize },

    #[error("context must contain at least one token")]
    EmptyContext,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("generation aborted after {} token(s): {source}", partial.len())]
    Generation {
        partial: Vec<TokenId>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by an external backend rather than by the caller's input.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Transport(_) | Error::Protocol(_) => true,
            Error::Generation { source, .. } => source.is_backend(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
