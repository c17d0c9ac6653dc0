use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    UnparseableCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: treatment value `{value}` is not 0 or 1")]
    InvalidTreatment { row: usize, value: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("only one treatment arm present (all rows have treatment = {0})")]
    SingleArm(u8),

    #[error("response is constant ({0}); cannot rescale to [0, 1]")]
    ConstantResponse(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "perfect separation: coefficient magnitude {magnitude:.3} exceeds 30 on the logit scale"
    )]
    Separation { magnitude: f64 },

    #[error(
        "{what} did not converge after {iterations} iterations (gradient norm {gradient:.3e})"
    )]
    NotConverged {
        what: &'static str,
        iterations: usize,
        gradient: f64,
    },

    #[error("degenerate direction `{0}`: score contributions have zero variance")]
    DegenerateDirection(String),

    #[error("no valid directions to test")]
    NoDirections,

    #[error("lambda path has no values below the selected lambda")]
    EmptyPath,

    #[error("missing nuisance: {0}")]
    MissingNuisance(&'static str),

    #[error("{0}")]
    Config(String),

    #[error("{failed} of {reps} replications failed (more than 5%)")]
    TooManyFailures { failed: usize, reps: usize },
}

impl Error {
    /// Numeric failures arise from fitting or estimation rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Separation { .. }
                | Error::NotConverged { .. }
                | Error::DegenerateDirection(_)
                | Error::NoDirections
                | Error::EmptyPath
                | Error::TooManyFailures { .. }
        )
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
