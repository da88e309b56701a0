use std::path::PathBuf;

/// Errors raised by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty softmax")]
    EmptySoftmax,
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite vector component")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("first frame exceeds budget ({count} features, budget {budget})")]
    FirstFrameExceedsBudget { count: usize, budget: usize },
    #[error("frame {frame} does not advance past current frame {current}")]
    FrameOrder { frame: u64, current: u64 },
    #[error("needed slots {needed} exceed budget {budget}")]
    NeededExceedsBudget { needed: usize, budget: usize },
    #[error("empty feature bank")]
    EmptyBank,
    #[error("label {label} out of range [0, {max}]")]
    LabelOutOfRange { label: usize, max: usize },
    #[error("need at least {needed} score maps, got {got}")]
    TooFewMaps { needed: usize, got: usize },
    #[error("scorer not trainable")]
    ScorerNotTrainable,
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid video: {0}")]
    Video(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("{}{}: {msg}", path.display(), offset.map(|o| format!(" (offset {o})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        offset: Option<u64>,
        msg: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, offset: Option<u64>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }

    /// True for errors caused by malformed or missing input data (as opposed
    /// to misuse of the API or violated internal invariants).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Io { .. }
                | Error::RawIo(_)
                | Error::Video(_)
                | Error::Snapshot(_)
                | Error::DegenerateFrame(_)
                | Error::Scene(_)
                | Error::InvalidConfig(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
