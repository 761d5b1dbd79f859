use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A state or stage went non-finite. `step` is the index of the step that
    /// produced it when the failure happened inside a driver loop.
    #[error("overflow (non-finite value){}{}", fmt_step(.step), fmt_dt(.dt))]
    Overflow { step: Option<usize>, dt: Option<f64> },

    #[error("nonlinear solve did not converge: residual {residual:e} after {iterations} iterations")]
    Convergence { residual: f64, iterations: usize },

    /// Neumann series requested outside its radius of convergence.
    #[error("series diverges: spectral radius estimate {spectral_radius} >= 1")]
    Divergence { spectral_radius: f64 },

    #[error("modified-field reduction is singular for 1 + k = 0 (k = {k})")]
    SingularReduction { k: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_step(step: &Option<usize>) -> String {
    step.map(|s| format!(" at step {s}")).unwrap_or_default()
}

fn fmt_dt(dt: &Option<f64>) -> String {
    dt.map(|d| format!(" (dt = {d})")).unwrap_or_default()
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attaches a step index to an overflow error; other errors pass through.
    pub fn at_step(self, index: usize) -> Self {
        match self {
            Error::Overflow { step: None, dt } => Error::Overflow { step: Some(index), dt },
            other => other,
        }
    }

    /// Attaches the step size of a sweep to an overflow error.
    pub fn with_dt(self, h: f64) -> Self {
        match self {
            Error::Overflow { step, dt: None } => Error::Overflow { step, dt: Some(h) },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
