use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented domain.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Euler-Maruyama produced a NaN or infinite state.
    #[error("non-finite state on path {path} at step {step}")]
    Integration { path: usize, step: usize },

    #[error("kernel matrix factorization failed at row {row} (pivot {pivot:e})")]
    Factorization { row: usize, pivot: f64 },

    #[error("predictive variance {variance:e} is below the roundoff tolerance")]
    NegativeVariance { variance: f64 },

    #[error("model has not been fitted")]
    Unfitted,

    #[error("singular system in reference solve")]
    Singular,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl Error {
    /// Process exit status: 1 for bad input (configuration, arguments, files, checkpoints),
    /// 2 for failures inside the numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Argument(_) | Error::Checkpoint(_) | Error::Io(_) | Error::Json(_) => 1,
            Error::Integration { .. }
            | Error::Factorization { .. }
            | Error::NegativeVariance { .. }
            | Error::Unfitted
            | Error::Singular
            | Error::Csv(_) => 2,
        }
    }
}
