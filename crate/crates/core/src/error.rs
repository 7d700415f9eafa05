use thiserror::Error;

use crate::optim::OptimError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error")]
    Io(#[from] std::io::Error),

    #[error("cannot open `{}`", path.display())]
    Open {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error")]
    Csv(#[from] csv::Error),

    #[error("json error")]
    Json(#[from] serde_json::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("empty table")]
    EmptyTable,

    #[error("size mismatch for {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown student `{0}`")]
    UnknownStudent(String),

    #[error("unknown skill `{0}`")]
    UnknownSkill(String),

    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Optimization(#[from] OptimError),
}
