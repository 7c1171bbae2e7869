//! Command failures and their exit statuses.

use std::path::PathBuf;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;
pub const EXIT_SCORER: i32 = 6;
pub const EXIT_WRITE: i32 = 7;

/// Text appended to `--help`.
pub const EXIT_STATUS_HELP: &str = "\
Exit status:
  0  success
  2  usage error (bad flags or arguments)
  3  input error (unreadable or malformed file)
  4  validation error (duplicate ids, ragged rows, mismatched inputs, rerun mismatch)
  5  numeric or domain error (zero variance, collinear shifts, rank, perplexity)
  6  scorer error (network failure, exhausted retries, non-finite score)
  7  write error (output could not be written)";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Numeric(String),

    #[error(transparent)]
    Scorer(#[from] crate::scorer::ScorerError),

    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Read { .. } | CliError::Parse { .. } => EXIT_INPUT,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Scorer(_) => EXIT_SCORER,
            CliError::Write { .. } => EXIT_WRITE,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        CliError::Parse { path: path.into(), line, message: message.into() }
    }
}

impl From<llmap_core::Error> for CliError {
    fn from(e: llmap_core::Error) -> Self {
        use llmap_core::Error as E;
        match e {
            E::ZeroVariance(_)
            | E::DegenerateDenominator { .. }
            | E::Collinear { .. }
            | E::RankDeficient { .. }
            | E::PerplexityInfeasible { .. }
            | E::Resample { .. } => CliError::Numeric(e.to_string()),
            E::InvalidParameter { name: "scores" | "data" | "response", .. } => CliError::Validation(e.to_string()),
            E::InvalidParameter { name: "learning_rate", ref reason } if reason.contains("diverged") => {
                CliError::Numeric(e.to_string())
            }
            E::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
