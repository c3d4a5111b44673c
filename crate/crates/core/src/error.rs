use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// State left the problem's admissible domain.
    #[error("state outside admissible domain: {0}")]
    DomainViolation(String),

    /// The maximizing control is undefined (Legendre condition fails).
    #[error("singular control: {0}")]
    SingularControl(String),

    /// An input violated an operation's contract (wrong dims, non-finite, ...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Terminal-manifold gradient lost rank where full rank is assumed.
    #[error("assumption violation: {0}")]
    AssumptionViolation(String),

    /// Numerical integration failed; carries the last good independent variable.
    #[error("propagation failed at t = {last_t}: {reason}")]
    Propagation { last_t: f64, reason: String },

    /// Determinant trace stayed at zero beyond the exclusion window.
    #[error("degenerate extremal family: |det| below rank threshold over the whole span")]
    DegenerateFamily,

    /// A terminal sample fell outside the admissible ranges.
    #[error("terminal sample {index} rejected: {reason}")]
    RejectedSample { index: usize, reason: String },

    /// Dataset generation produced no usable extremals.
    #[error("no usable extremals: every terminal sample failed to propagate")]
    EmptyDataset,

    /// A data file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Training diverged.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    /// Invalid run configuration; the message names the offending field path.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/config problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Parse { .. } | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
