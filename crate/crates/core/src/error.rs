use thiserror::Error;

use crate::data::Group;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("bad value in row {row}, column `{column}`: {reason}")]
    BadValue {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("protected attribute must take exactly two values among {{x0, x1}}; found {0}")]
    NonBinaryAttribute(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("row {row}: {reason}")]
    Inconsistent { row: usize, reason: String },

    #[error("score column is missing")]
    MissingScore,

    #[error("outcome column is missing")]
    MissingOutcome,

    #[error("target column `{0}` is missing")]
    MissingTarget(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("unknown variable `{0}` in intervention clause")]
    UnknownVariable(String),

    #[error("model parse error: {0}")]
    Parse(String),

    #[error("conditioning event X = {0} has zero probability")]
    DegenerateConditioning(Group),

    #[error("empty cell x={x}, stratum={stratum}")]
    EmptyCell { x: Group, stratum: String },

    #[error("logistic fit did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("row schema does not match the training schema: {0}")]
    SchemaMismatch(String),

    #[error("missing nuisance model: {0}")]
    MissingNuisance(String),

    #[error("degenerate protected attribute: {0}")]
    DegenerateAttribute(String),

    #[error("no bootstrap replicates stored for term {0}")]
    MissingReplicates(String),

    #[error("bootstrap failed: {dropped} of {total} replicates dropped")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
