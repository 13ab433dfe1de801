//! Crate-wide error type.

use thiserror::Error;

use crate::markers::MarkerId;

/// Errors produced by ingestion, sampling, model fitting and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("measured value must be positive, got {value} for {marker:?}")]
    NonPositiveValue { marker: MarkerId, value: f64 },

    #[error("no detection-limit substitution rule for {marker:?}")]
    SubstitutionUndefined { marker: MarkerId },

    #[error("ratio denominator {marker:?} is non-positive ({value})")]
    DivisionByNonPositive { marker: MarkerId, value: f64 },

    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("unknown marker column `{column}`")]
    UnknownMarkerColumn { column: String },

    #[error("duplicate timestamp {timestamp} for athlete `{athlete_id}`")]
    DuplicateTimestamp { athlete_id: String, timestamp: u64 },

    #[error("matrix not positive definite at leading minor {minor}{}",
            context.as_ref().map(|c| format!(" while sampling {c}")).unwrap_or_default())]
    NotPositiveDefinite { minor: usize, context: Option<String> },

    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Wishart degrees of freedom {df} must exceed dim - 1 = {}", dim - 1)]
    DegreesOfFreedomTooSmall { df: f64, dim: usize },

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("need at least {required} observations, got {got}")]
    TooFewObservations { required: usize, got: usize },

    #[error("athlete `{0}` has no samples")]
    EmptyAthlete(String),

    #[error("athlete index {index} not present in the fit (J = {fitted})")]
    UnknownAthlete { index: usize, fitted: usize },

    #[error("no population threshold for {marker:?} ({sex:?})")]
    MissingThreshold { marker: MarkerId, sex: crate::markers::Sex },

    #[error("both classes must be present")]
    SingleClassInput,

    #[error("length mismatch: {left} decisions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("sample has no true label")]
    MissingLabel,

    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),

    #[error("no baseline mean available for {marker:?} ({sex:?}); supply mu0 explicitly")]
    MissingBaselineMean { marker: MarkerId, sex: crate::markers::Sex },

    #[error("chain file is malformed: {0}")]
    MalformedChainFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
