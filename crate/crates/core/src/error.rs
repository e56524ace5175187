use thiserror::Error;

#[derive(Debug, Error)]
pub enum CdpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("trajectory has {got} transitions, horizon is {expected}")]
    HorizonMismatch { expected: usize, got: usize },

    #[error("ragged trajectory: {0}")]
    RaggedTrajectory(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("densities are stale; refresh priorities before sampling")]
    DirtyDensities,

    #[error("density model has not been fitted")]
    UnfittedModel,

    #[error("priority must be non-negative and finite, got {0}")]
    InvalidPriority(f64),

    #[error("value {value} outside [0, {upper})")]
    OutOfRange { value: f64, upper: f64 },

    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("no future step after t={t} in a horizon-{horizon} trajectory")]
    NoFutureStep { t: usize, horizon: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unsupported document version {0}")]
    UnsupportedVersion(u32),

    #[error("run aborted at {location}: {source}")]
    Aborted {
        location: RunLocation,
        #[source]
        source: Box<CdpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where in the epoch loop an experiment failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunLocation {
    pub epoch: usize,
    pub episode: Option<usize>,
    pub step: Option<usize>,
}

impl std::fmt::Display for RunLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch {}", self.epoch)?;
        if let Some(e) = self.episode {
            write!(f, ", episode {e}")?;
        }
        if let Some(s) = self.step {
            write!(f, ", step {s}")?;
        }
        Ok(())
    }
}

pub type Result<T> = std::result::Result<T, CdpError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CdpError::DimensionMismatch { expected, got });
    }
    Ok(())
}
