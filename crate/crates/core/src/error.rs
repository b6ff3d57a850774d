use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes. The numeric value doubles as the process exit code
/// of the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage = 1,
    Schema = 2,
    Integrity = 3,
    Divergence = 4,
}

impl ErrorCategory {
    pub fn exit_code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty data: {0}")]
    EmptyData(String),
    #[error("forward cache does not belong to these parameters")]
    StaleCache,
    #[error("numerical divergence at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("schedule overflow: epoch {epoch} exceeds the planned {total} epochs")]
    ScheduleOverflow { epoch: usize, total: usize },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at data row {row}: {detail}")]
    Parse { row: usize, detail: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined metric: {0}")]
    UndefinedDenominator(String),
    #[error("quantile grid too small: {0}")]
    InsufficientGrid(String),
    #[error("degenerate perturbation: every feature has zero spread")]
    DegeneratePerturbation,
    #[error("surrogate normal matrix is rank deficient; use a ridge penalty lambda > 0")]
    RankDeficient,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Usage(_) => ErrorCategory::Usage,
            InvalidArchitecture(_)
            | Shape(_)
            | StaleCache
            | Schema(_)
            | Config(_)
            | Json(_)
            | Io { .. } => ErrorCategory::Schema,
            EmptyData(_)
            | Parse { .. }
            | Integrity(_)
            | InsufficientData(_)
            | UndefinedDenominator(_)
            | InsufficientGrid(_)
            | DegeneratePerturbation
            | ScheduleOverflow { .. } => ErrorCategory::Integrity,
            Divergence { .. } | RankDeficient => ErrorCategory::Divergence,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
