use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("operating point is overdamped (no relaxation oscillation): {0}")]
    Domain(String),
    #[error("degenerate range: {0}")]
    DegenerateRange(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("sequence {index}: {source}")]
    Sequence {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    /// Carries the best weights seen before the failure.
    #[error("training aborted at epoch {epoch}: {reason}")]
    TrainingAborted {
        epoch: usize,
        reason: String,
        last_good: Box<crate::surrogates::SurrogateModel>,
    },
    #[error("equalizer diverged: {0}")]
    Divergence(String),
    #[error("no checkpoint for {cell} at {}", path.display())]
    MissingCheckpoint {
        cell: String,
        path: std::path::PathBuf,
    },
    #[error("file format: {0}")]
    Format(String),
    #[error(transparent)]
    Autodiff(#[from] dml_autodiff::AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
