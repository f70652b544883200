use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("feature vector of sample {id} has zero norm")]
    ZeroNormFeature { id: u64 },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("centrality scores are degenerate (empty or all equal)")]
    DegenerateScores,

    #[error("need at least {min} scores to fit a mixture, got {got}")]
    TooFewScores { min: usize, got: usize },

    #[error("component {component} collapsed (weighted variance {variance:e})")]
    DegenerateVariance { component: usize, variance: f64 },

    #[error("responsibilities became non-finite during EM")]
    NonFiniteResponsibility,

    #[error("score {0} is outside the open unit interval")]
    Domain(f64),

    #[error("training failed: {0}")]
    Training(String),

    #[error("filtering class {class} failed: {source}")]
    Filter { class: usize, source: Box<Error> },

    #[error("filtering cycle {cycle}: {source}")]
    Cycle { cycle: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the data carrying no usable signal
    /// (too few samples, identical scores, a collapsed mixture component)
    /// rather than by a bug or a bad input.
    pub fn is_degenerate(&self) -> bool {
        match self {
            Error::DegenerateScores
            | Error::TooFewScores { .. }
            | Error::DegenerateVariance { .. }
            | Error::NonFiniteResponsibility
            | Error::Convergence { .. } => true,
            Error::Filter { source, .. } | Error::Cycle { source, .. } => source.is_degenerate(),
            _ => false,
        }
    }
}
