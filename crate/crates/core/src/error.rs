use std::io;

/// Errors produced by the estimators, profile handling, simulators and exporters.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("time {t} s is outside the profile range [0, {duration})")]
    OutOfRange { t: f64, duration: f64 },

    #[error("profile exhausted at {t} s with {remaining_kbit} kbit left to deliver")]
    ProfileExhausted { t: f64, remaining_kbit: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
