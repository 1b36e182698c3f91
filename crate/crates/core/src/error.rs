use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A user supplied function returned a non-finite value.
    #[error("non-finite {what} at {point:?}")]
    Evaluation { what: String, point: Vec<f64> },

    #[error("path diverged at step {step}")]
    Divergence { step: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported method: {0}")]
    UnsupportedMethod(String),

    /// Inputs fall outside the parameter regime where a bound is valid.
    #[error("regime violation: {0}")]
    Regime(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("solver did not converge after {sweeps} sweeps (kkt residual {kkt_residual:e})")]
    NonConvergence { sweeps: usize, kkt_residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn eval(what: impl Into<String>, point: &[f64]) -> Self {
        Error::Evaluation { what: what.into(), point: point.to_vec() }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Argument(msg()))
    }
}
