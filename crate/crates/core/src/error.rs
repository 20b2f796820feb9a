use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown query {0}")]
    UnknownQuery(usize),

    #[error("query {query} has no response {response}")]
    UnknownResponse { query: usize, response: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        trace: Box<crate::trainer::TrainTrace>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
