use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Cholesky factorization failed even after the jitter ladder.
    #[error("matrix not positive definite (jitter ladder exhausted at {jitter_cap:.3e})")]
    NotPositiveDefinite { jitter_cap: f64 },

    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dataset or state dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A summary or diagnostic was asked for with too little data.
    #[error("too few draws: need at least {need}, have {have}")]
    TooFewDraws { need: usize, have: usize },

    /// Trace export was asked for a name the chain does not record.
    #[error("unknown parameter: {0}")]
    UnknownParameter(String),

    /// Chain aborted mid-run; carries the iteration and update for context.
    #[error("sampler aborted at iteration {iteration} in update `{update}`: {source}")]
    SamplerAbort {
        iteration: usize,
        update: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
