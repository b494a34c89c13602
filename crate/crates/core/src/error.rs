use thiserror::Error;

/// Errors raised by the numerical kernels, the risk measures and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("no sign change on [{lo}, {hi}] (f(lo)={f_lo}, f(hi)={f_hi})")]
    Bracketing { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("no convergence after {iterations} iterations (last estimate {last})")]
    Convergence { iterations: usize, last: f64 },

    #[error("tail integral truncated after {panels} panels (partial value {partial})")]
    Truncation { panels: usize, partial: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("model error: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for failures of an iterative method rather than bad inputs.
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::Bracketing { .. } | Error::Convergence { .. } | Error::Truncation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
