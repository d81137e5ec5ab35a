use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid well specification: {0}")]
    InvalidWell(String),

    #[error("shape mismatch: expected length {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("phase-space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverNotConverged { iterations: usize, residual: f64 },

    #[error("eigensolver converged {converged} of {requested} eigenpairs after {iterations} iterations")]
    EigenNotConverged {
        requested: usize,
        converged: usize,
        iterations: usize,
        partial: Vec<crate::spectral::EigenPair>,
    },

    #[error("spectral guard violated: {0}")]
    GuardViolation(String),

    #[error("Picard iterate left the ball of radius {radius:e} (distance {distance:e})")]
    BallExit { radius: f64, distance: f64 },

    #[error("Picard iteration is not contracting (gap ratio {ratio:.3} at sweep {sweep})")]
    NonContraction { sweep: usize, ratio: f64 },

    #[error("Picard iteration did not reach tolerance within {sweeps} sweeps")]
    PicardStalled { sweeps: usize },

    #[error("window {index} failed: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("study failed: {0}")]
    StudyFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, found })
    }
}
