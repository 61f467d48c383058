use thiserror::Error;

/// Failures raised by the solvers, the simulator and the file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("finite escape at t = {t:.6}: {what}")]
    FiniteEscape { what: String, t: f64 },
    #[error("no stabilizing solution: {0}")]
    NoStabilizingSolution(String),
    #[error("singular Upsilon at t = {t:.6}")]
    SingularUpsilon { t: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported family for this operation: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
