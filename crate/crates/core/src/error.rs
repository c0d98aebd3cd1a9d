use thiserror::Error;

pub type Result<T> = std::result::Result<T, NcsError>;

#[derive(Debug, Error)]
pub enum NcsError {
    #[error("dimension mismatch in {block}: {detail}")]
    Dimension { block: String, detail: String },

    #[error("invalid network bounds: {0}")]
    InvalidNetwork(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("decision layouts differ: {0}")]
    LayoutMismatch(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("timing policy infeasible: {0}")]
    Timing(String),

    #[error("history not available at t={0}")]
    History(f64),

    #[error("evaluation time {t} outside simulated range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("state diverged at t={time}")]
    Divergence { time: f64 },

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("no certificate at any tested span: {0}")]
    NoCertificate(String),

    #[error("bracket contract violated: {0}")]
    Bracket(String),

    #[error("solver health failure: {0}")]
    SolverHealth(String),

    #[error("decay rate must be positive for the ISS bound; re-certify at a small positive alpha first")]
    AlphaZero,

    #[error("unknown table id `{0}` (expected ex1-n2, ex1-n4 or ex2)")]
    UnknownTable(String),

    #[error("unknown scenario {0}")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NcsError {
    pub(crate) fn dim(block: impl Into<String>, detail: impl Into<String>) -> Self {
        NcsError::Dimension {
            block: block.into(),
            detail: detail.into(),
        }
    }
}
