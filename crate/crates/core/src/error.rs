use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid exponent {value}: {reason}")]
    InvalidExponent { value: f64, reason: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: expected {expected} interior nodes, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("nonlinear solve did not converge after {iterations} iterations (last residual {:e})", .residual_history.last().copied().unwrap_or(f64::NAN))]
    NonConvergence {
        iterations: usize,
        residual_history: Vec<f64>,
    },

    #[error("nonlinear solve diverged: non-finite residual after {iterations} iterations")]
    Divergence {
        iterations: usize,
        residual_history: Vec<f64>,
    },

    #[error("inverse of b did not converge; last bracket [{lo}, {hi}]")]
    InverseNonConvergence { lo: f64, hi: f64 },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("path with seed {seed} failed: {source}")]
    PathFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("ensemble failed: {failed} of {total} paths did not converge")]
    EnsembleFailed { failed: usize, total: usize },

    #[error("failed at t = {time}: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::StepFailed {
            step,
            source: Box::new(self),
        }
    }

    /// First step index found in the error chain.
    pub fn failed_step(&self) -> Option<usize> {
        match self {
            Error::StepFailed { step, .. } => Some(*step),
            Error::PathFailed { source, .. } | Error::AtTime { source, .. } => source.failed_step(),
            _ => None,
        }
    }

    pub(crate) fn on_path(self, seed: u64) -> Self {
        Error::PathFailed {
            seed,
            source: Box::new(self),
        }
    }
}
