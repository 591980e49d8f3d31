use std::path::Path;

use geoloc::evaluation::EvalError;
use geoloc::matching::MatchingError;
use geoloc::scene::SceneError;
use geoloc::simulator::SimError;
use geoloc::tracker::TrackerError;
use thiserror::Error;

/// Command failure with its exit-code class.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, invalid configuration or missing inputs.
    #[error("{0}")]
    Usage(String),
    /// Input files that exist but cannot be used.
    #[error("{0}")]
    Data(String),
    /// A broken internal invariant.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::Usage(e.to_string()),
            SceneError::Io { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config { .. } => CliError::Usage(e.to_string()),
            SimError::Scene(s) => s.into(),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<MatchingError> for CliError {
    fn from(e: MatchingError) -> Self {
        match e {
            MatchingError::Config(_) => CliError::Usage(e.to_string()),
            MatchingError::Checkpoint(_)
            | MatchingError::MissingFeature(_)
            | MatchingError::CapacityExceeded { .. }
            | MatchingError::EmptyDataset
            | MatchingError::DegenerateMatch(_)
            | MatchingError::ShapeMismatch(_) => CliError::Data(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<TrackerError> for CliError {
    fn from(e: TrackerError) -> Self {
        match e {
            TrackerError::Matching(m) => m.into(),
            TrackerError::OutOfOrderFrame { .. } => CliError::Data(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Criterion(_) => CliError::Usage(e.to_string()),
            EvalError::Format(_) | EvalError::NoPairs => CliError::Data(e.to_string()),
            EvalError::Geometry(_) => CliError::Internal(e.to_string()),
        }
    }
}
