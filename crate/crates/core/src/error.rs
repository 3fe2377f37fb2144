use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("norm blows up at t = {blow_up_time} (requested delta_t = {delta_t})")]
    BlowUp { blow_up_time: f64, delta_t: f64 },

    #[error("bound is invalid: {0}")]
    BoundInvalid(String),

    #[error("no escape direction found: {0}")]
    NoEscapeFound(String),

    #[error("construction is degenerate: {0}")]
    ConstructionDegenerate(String),

    #[error("no descent direction: {0}")]
    NoDescent(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("IDX format error: {0}")]
    Format(String),

    #[error("IDX length error: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
