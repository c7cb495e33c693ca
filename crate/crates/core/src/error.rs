use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid camera {id}: {reason}")]
    InvalidCamera { id: usize, reason: String },

    #[error("invalid rig: {0}")]
    InvalidRig(String),

    #[error("landmark {landmark} has depth {depth:e} at or below the projection limit")]
    DegenerateDepth { landmark: usize, depth: f64 },

    #[error("triangulation needs at least 2 views, got {0}")]
    InsufficientViews(usize),

    #[error("landmark {0} triangulates to a point at infinity")]
    PointAtInfinity(usize),

    #[error("landmark count mismatch: expected {expected}, got {got}")]
    LandmarkCount { expected: usize, got: usize },

    #[error("unknown camera id {0}")]
    UnknownCamera(usize),

    #[error("alignment is degenerate: {0}")]
    DegenerateAlignment(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDepth { .. }
                | Error::PointAtInfinity(_)
                | Error::DegenerateAlignment(_)
                | Error::NonFinite(_)
                | Error::Diverged { .. }
                | Error::Generation(_)
        )
    }
}
