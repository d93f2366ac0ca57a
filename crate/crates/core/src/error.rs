use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the simulator and its analysis tools can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weight at index {index} is not positive: {value}")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("non-finite value in input")]
    NonFiniteInput,

    #[error("label set is empty")]
    EmptyLabels,
    #[error("invalid concentration: {0}")]
    InvalidConcentration(String),
    #[error("invalid task shape: {0}")]
    InvalidShape(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("learning rate at step {step} is not positive: {value}")]
    NonPositiveLearningRate { step: usize, value: f64 },
    #[error("loss set is empty")]
    EmptyLossSet,

    #[error("moving-average window must be at least 1")]
    InvalidWindow,
    #[error("negative input: {0}")]
    NegativeInput(&'static str),
    #[error("latency must be positive, got {0}")]
    NonPositiveLatency(f64),

    #[error("staleness bound b must be at least 1")]
    InvalidBound,
    #[error("aggregation goal K must be at least 1")]
    InvalidGoal,
    #[error("aggregation buffer is empty")]
    EmptyBuffer,
    #[error("applied version {applied} must exceed base version {base}")]
    VersionOrderViolation { base: u64, applied: u64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("hold-out set is empty")]
    EmptyHoldout,
    #[error("model diverged at version {version}")]
    NonFiniteModel { version: u64 },

    #[error("aggregation event at t={time} carries no interval; lemma check needs a pace-mode log")]
    MissingIntervalField { time: f64 },
    #[error("client {client} reported at t={time} without a matching selection")]
    UnmatchedSpan { client: u32, time: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("log line {line}: {message}")]
    LogParse { line: usize, message: String },
}

impl Error {
    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
