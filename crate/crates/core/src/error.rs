use thiserror::Error;

/// Errors raised by estimation, ingestion and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("day index {0} is outside the representable calendar range")]
    DateOverflow(i64),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("complete separation detected; diverging direction: {direction}")]
    Separation { direction: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("zero probability at observed cell (t={t}, d={d}) holding count {count}")]
    ZeroProbability { t: usize, d: usize, count: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
