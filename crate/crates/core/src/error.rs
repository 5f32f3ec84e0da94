use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition matrix row {row} is not a probability distribution (sum = {sum})")]
    InvalidTransitionRow { row: usize, sum: f64 },

    #[error("transition matrix entry ({row}, {col}) = {value} is outside [0, 1]")]
    InvalidTransitionEntry { row: usize, col: usize, value: f64 },

    #[error("innovation covariance is singular or not positive definite (condition number {condition:e})")]
    DegenerateMeasurement { condition: f64 },

    #[error("invalid configuration value for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("failed to parse configuration {origin}: {message}")]
    ConfigParse { origin: String, message: String },

    #[error("mode {mode} filter failed: {source}")]
    ModeFilter {
        mode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("imm-estimator failed at step {step}: {source}")]
    Estimator {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
