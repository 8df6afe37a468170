use thiserror::Error;

/// Unified error type for validation, inference, and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("record '{id}': standard error must be positive and finite")]
    NonPositiveStdError { id: String },
    #[error("record '{id}': estimate must be finite")]
    NonFiniteEstimate { id: String },
    #[error("records '{first}' and '{second}' share seq_index {seq_index}")]
    DuplicateSeqIndex {
        first: String,
        second: String,
        seq_index: u32,
    },
    #[error("group '{group_id}': record '{id}' breaks seq_index contiguity")]
    NonContiguousGroup { group_id: String, id: String },
    #[error("label '{label}' has no belief entry at or before step {seq_index}")]
    LabelUnknownAtTime { label: String, seq_index: u32 },
    #[error("study sequence is empty")]
    EmptySequence,
    #[error("observation variance must be positive, got {value}")]
    NonPositiveVariance { value: f64 },
    #[error("record '{id}' carries no methodology label")]
    UnlabeledRecord { id: String },
    #[error("joint covariance lost positive definiteness")]
    SingularCovariance,
    #[error("grid posterior underflowed; density bounds are degenerate")]
    GridUnderflow,
    #[error("grid CDF is not monotone; density is numerically broken")]
    NonMonotoneCdf,
    #[error("CSV header is missing column '{name}'")]
    MissingColumn { name: String },
    #[error("row {row}: cannot parse {field} value '{value}'")]
    UnparsableNumber {
        row: usize,
        field: String,
        value: String,
    },
    #[error("config {pointer}: {message}")]
    SchemaViolation { pointer: String, message: String },
    #[error("label '{label}' does not appear in the study data")]
    UnknownLabel { label: String },
    #[error("sweep value grid is empty")]
    EmptyValueGrid,
    #[error("focus step {step} is outside the trace (last step {last})")]
    FocusStepOutOfRange { step: usize, last: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for input/validation problems, 3 for numerical
    /// failures inside the engines.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SingularCovariance | Error::GridUnderflow | Error::NonMonotoneCdf => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
