use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// One structural problem found while validating a matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateModelId { id: String, first: usize, second: usize },
    DuplicatePairId { id: String, first: usize, second: usize },
    NonFinite { row: usize, col: usize, value: f64 },
    /// `values` length does not equal `rows * cols`.
    Shape { rows: usize, cols: usize, len: usize },
    BelowClipThreshold { row: usize, col: usize, value: f64, threshold: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateModelId { id, first, second } => {
                write!(f, "duplicate model id {id:?} at rows {first} and {second}")
            }
            Violation::DuplicatePairId { id, first, second } => {
                write!(f, "duplicate pair id {id:?} at columns {first} and {second}")
            }
            Violation::NonFinite { row, col, value } => {
                write!(f, "non-finite value {value} at row {row}, col {col}")
            }
            Violation::Shape { rows, cols, len } => {
                write!(f, "expected {rows}x{cols} = {} values, found {len}", rows * cols)
            }
            Violation::BelowClipThreshold { row, col, value, threshold } => write!(
                f,
                "value {value} at row {row}, col {col} is below clip threshold {threshold}"
            ),
        }
    }
}

struct Violations<'a>(&'a [Violation]);

impl fmt::Display for Violations<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid matrix: {}", Violations(.0))]
    InvalidMatrix(Vec<Violation>),

    #[error("duplicate pair id {0:?}")]
    DuplicatePairId(String),

    #[error("pair {0:?} has an empty response")]
    EmptyResponse(String),

    #[error("need at least {min} entries, got {len}")]
    TooShort { len: usize, min: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("expected a {expected} vector, got {found}")]
    WrongKind { expected: &'static str, found: &'static str },

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("model {model:?}: denominator norm {norm:e} is below 1e-12")]
    DegenerateDenominator { model: String, norm: f64 },

    #[error("model {0:?} not found")]
    MissingModel(String),

    #[error("mean shift vectors are collinear or zero (angle {angle:e} rad, tolerance {tolerance:e})")]
    Collinear { angle: f64, tolerance: f64 },

    #[error("requested {requested} components but effective rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("perplexity {perplexity} infeasible for {points} points (max {max})")]
    PerplexityInfeasible { perplexity: f64, points: usize, max: f64 },

    #[error("token {0:?} is not in the alphabet")]
    UnknownToken(String),

    #[error("prompt {0:?} is not in the alphabet")]
    UnknownPrompt(String),

    #[error("response {0:?} exceeds the maximum response length")]
    ResponseTooLong(String),

    #[error("oracle models do not share alphabets or prompt distribution")]
    AlphabetMismatch,

    #[error("invalid oracle model: {0}")]
    InvalidModel(String),

    #[error("embedding {index} of {model:?} has norm {norm}, expected 1")]
    NotUnitNorm { model: String, index: usize, norm: f64 },

    #[error("resample {index}: {source}")]
    Resample { index: usize, source: Box<Error> },
}
