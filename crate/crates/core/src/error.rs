//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A row handed to `l2_normalize` has (near-)zero norm.
    DegenerateRow { row: usize, norm: f64 },
    /// Matrix or vector dimensions do not line up.
    ShapeMismatch { context: String },
    /// PK sampling asked for more classes than the dataset has.
    InsufficientClasses { requested: usize, available: usize },
    /// PK sampling asked for more samples than a class holds.
    InsufficientSamplesPerClass {
        class: i64,
        requested: usize,
        available: usize,
    },
    /// Random sampling asked for more rows than exist.
    BatchTooLarge { requested: usize, available: usize },
    /// Threshold mining requires `0 <= m1 <= m2`.
    InvalidThresholds { m1: f64, m2: f64 },
    /// Triplet mining requires a nonnegative margin.
    NegativeMargin { margin: f64 },
    /// A mined pair or triplet violates the margin its weight formula assumes.
    PreconditionViolation { context: String },
    /// Weight vector shape does not match the mined sets it was computed for.
    WeightMiningMismatch { context: String },
    /// Batch does not have the structure a loss requires (e.g. N-pair).
    StructureViolation { context: String },
    /// Multi-similarity temperatures must be strictly positive.
    InvalidTemperature { alpha: f64, beta: f64 },
    /// Recall@K was asked for more neighbors than the gallery holds.
    KTooLarge { k: usize, max_k: usize },
    /// A class-disjoint split needs at least two classes.
    TooFewClasses { available: usize },
    /// Generic invalid-argument error with context.
    InvalidParams { context: String },
    /// Configuration field failed validation.
    InvalidConfig { field: String, message: String },
    /// CSV parse failure.
    Parse { line: usize, message: String },
    /// CSV row with the wrong number of cells.
    RaggedRow {
        line: usize,
        expected: usize,
        got: usize,
    },
    /// I/O failure, flattened to a message.
    Io { context: String },
    /// Training produced a non-finite loss value.
    NonFiniteLoss { step: usize, value: f64 },
    /// Forward cache does not match the model or gradient it is used with.
    CacheMismatch { context: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DegenerateRow { row, norm } => {
                write!(f, "row {row} has degenerate norm {norm:e}; cannot normalize")
            }
            Error::ShapeMismatch { context } => write!(f, "shape mismatch: {context}"),
            Error::InsufficientClasses {
                requested,
                available,
            } => write!(
                f,
                "PK sampler requested {requested} classes but only {available} are usable"
            ),
            Error::InsufficientSamplesPerClass {
                class,
                requested,
                available,
            } => write!(
                f,
                "class {class} has {available} samples, fewer than the {requested} requested per class"
            ),
            Error::BatchTooLarge {
                requested,
                available,
            } => write!(
                f,
                "batch size {requested} exceeds dataset size {available}"
            ),
            Error::InvalidThresholds { m1, m2 } => {
                write!(f, "thresholds must satisfy 0 <= m1 <= m2, got m1={m1}, m2={m2}")
            }
            Error::NegativeMargin { margin } => {
                write!(f, "margin must be nonnegative, got {margin}")
            }
            Error::PreconditionViolation { context } => {
                write!(f, "precondition violated: {context}")
            }
            Error::WeightMiningMismatch { context } => {
                write!(f, "weights do not match mined sets: {context}")
            }
            Error::StructureViolation { context } => {
                write!(f, "batch structure violation: {context}")
            }
            Error::InvalidTemperature { alpha, beta } => write!(
                f,
                "temperatures must be positive, got alpha={alpha}, beta={beta}"
            ),
            Error::KTooLarge { k, max_k } => {
                write!(f, "K={k} exceeds the maximum gallery size {max_k} (N-1)")
            }
            Error::TooFewClasses { available } => {
                write!(f, "need at least 2 classes for a class-disjoint split, got {available}")
            }
            Error::InvalidParams { context } => write!(f, "invalid parameters: {context}"),
            Error::InvalidConfig { field, message } => {
                write!(f, "invalid config field `{field}`: {message}")
            }
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::RaggedRow {
                line,
                expected,
                got,
            } => write!(
                f,
                "ragged row at line {line}: expected {expected} cells, got {got}"
            ),
            Error::Io { context } => write!(f, "i/o error: {context}"),
            Error::NonFiniteLoss { step, value } => {
                write!(f, "non-finite loss {value} at step {step}; aborting")
            }
            Error::CacheMismatch { context } => write!(f, "cache mismatch: {context}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io {
            context: err.to_string(),
        }
    }
}
