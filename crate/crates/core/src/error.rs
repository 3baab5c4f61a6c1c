use std::path::PathBuf;

use crate::grid::DoseCoord;

pub type Result<T, E = KeyboardError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum KeyboardError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },

    #[error("no scenario with {target} MTDs after {attempts} attempts")]
    GeneratorExhausted { target: usize, attempts: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("trial is not active (status {0})")]
    NotActive(String),

    #[error("trial has not finished (status {0})")]
    NotFinished(String),

    #[error("DLT count {dlts} outside 0..={cohort_size}")]
    OutcomeRange { dlts: u32, cohort_size: u32 },

    #[error("cohort of {cohort_size} would exceed the maximum sample size {max_n}")]
    SampleSizeExceeded { cohort_size: u32, max_n: u32 },

    #[error("no candidate dose for MTD selection")]
    EmptyCandidates,

    #[error("history replay diverged at entry {index}: {reason}")]
    ReplayMismatch { index: usize, reason: String },

    #[error("incoherent escalation at {dose} with {y}/{n} DLTs")]
    CoherenceViolation { dose: DoseCoord, n: u32, y: u32 },

    #[error("unsupported document version {0}")]
    UnsupportedVersion(u32),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KeyboardError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        KeyboardError::Domain(msg.into())
    }

    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        KeyboardError::InvalidConfig {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KeyboardError::Io {
            path: path.into(),
            source,
        }
    }
}
