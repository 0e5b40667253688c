use thiserror::Error;

use crate::theory::Strategy;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown {kind} `{symbol}`")]
    Vocabulary { kind: &'static str, symbol: String },

    #[error("parse error at character {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("input too long: {length} tokens exceeds the maximum of {max}")]
    InputTooLong { length: usize, max: usize },

    #[error("theory is empty")]
    EmptyTheory,

    #[error("structural error: {0}")]
    Structure(String),

    #[error("theory is not stratified: negation cycle through `{0}`")]
    Stratification(String),

    #[error("inconsistent theory: both {0} and its negation are derived")]
    Consistency(String),

    #[error("operation requires strategy {expected} but the question has strategy {actual}")]
    WrongStrategy { expected: Strategy, actual: Strategy },

    #[error("no representable proof for {0}")]
    NoProof(String),

    #[error("generation failed for bucket {bucket} after {attempts} attempts")]
    Generation { bucket: String, attempts: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("prediction/dataset id mismatch: {0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
