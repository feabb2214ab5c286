use std::path::PathBuf;

/// Errors raised by the recourse engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error in feature '{feature}': {message}")]
    Validation { feature: String, message: String },

    #[error("unknown feature '{0}'")]
    UnknownFeature(String),

    #[error("empty population: {0}")]
    EmptyPopulation(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("degenerate labels: training data contains only class {0}")]
    DegenerateLabels(u8),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("audit error: protected group {0} is absent from the evaluation split")]
    MissingGroup(u8),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model fingerprint mismatch: model built for {expected}, dataset schema is {actual}")]
    Fingerprint { expected: String, actual: String },

    #[error("instance is not part of the scored dataset")]
    UnseenInstance,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
