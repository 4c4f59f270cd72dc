use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad shapes, unknown layout names, mismatched observation kinds, invalid config values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's contract (stepping a finished episode, prefix too long, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training diverged: non-finite gradient in block `{block}`")]
    Diverged { block: String },

    #[error("training error: {0}")]
    Training(String),

    /// A label contained a word the fixed vocabulary does not know.
    #[error("annotation error: unknown token `{token}`")]
    UnknownToken { token: String },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
