use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("undeclared variable {0}")]
    Declaration(String),
    #[error("no value assigned to {0}")]
    Evaluation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("complete system too large: {vars} variables exceeds cap {cap}")]
    TooLarge { vars: u64, cap: u64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no KKT point: residual {0:.3e}")]
    NoKktPoint(f64),
    #[error("degenerate: cannot reconstruct ({0})")]
    Degenerate(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
