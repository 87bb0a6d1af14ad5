use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid MDP: {0}")]
    InvalidMdp(ValidationReport),

    /// An iterative solver hit its sweep cap before reaching the requested
    /// tolerance. The full residual history is attached for diagnosis.
    #[error("{solver} did not converge within {iterations} sweeps (last residual {last_residual:e})")]
    SolverFailure {
        solver: &'static str,
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("state {state} has zero occupancy under the reference policy")]
    StarvedState { state: usize },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected,
                got,
            })
        }
    }
}
