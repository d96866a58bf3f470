//! Error types shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated its documented precondition.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A drift/noise field evaluated to a non-finite value.
    #[error("non-finite field evaluation ({what}) at x = {x:?}")]
    Evaluation { what: &'static str, x: Vec<f64> },

    /// A fixed-point or time-stepping iterate left the representable range.
    #[error("iteration diverged at step {step} (iterate {index})")]
    Divergence { step: usize, index: usize },

    /// The requested computation is not defined on this domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operator assembly failed; the message lists offending nodes.
    #[error("operator build failed: {0}")]
    Build(String),

    /// An iterative solver ran out of iterations.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
