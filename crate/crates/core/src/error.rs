use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A formula was evaluated outside its domain of definition.
    #[error("domain error: {0}")]
    Domain(String),

    /// An object could not be constructed because its invariants fail.
    #[error("invalid construction: {0}")]
    Construction(String),

    /// A solver or assembly configuration violates a precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is malformed (non-finite entries, wrong lengths).
    #[error("input error: {0}")]
    Input(String),

    /// Assembly of one column failed.
    #[error("column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
