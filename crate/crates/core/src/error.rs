use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        field: String,
        message: String,
    },

    #[error("{path}: duplicate hour {hour}")]
    DuplicateHour { path: PathBuf, hour: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no weather record for hour {0}")]
    MissingWeather(String),

    #[error("car `{0}` has no charging history; route it to Model1")]
    UnseenCar(String),

    #[error("insufficient data horizon: {0}")]
    Horizon(String),

    #[error("{0} models do not expose feature importance")]
    ImportanceUnsupported(&'static str),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

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
