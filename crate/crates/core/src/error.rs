use thiserror::Error;

/// Errors raised by the laboratory's operations.
///
/// Variants follow the failure classes of the operations: contract violations
/// on inputs, numerical resolution problems, unstable fits and I/O.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unresolved discretization: {0}")]
    Resolution(String),

    #[error("unstable fit: {0}")]
    FitUnstable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("hypothesis audit failed: {0}")]
    HypothesisAudit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
