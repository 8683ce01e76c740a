use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },

    #[error("geometric tail mass {tail:e} beyond n_max = {n_max} exceeds tolerance {tol:e}")]
    TailTooHeavy { n_max: usize, tail: f64, tol: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty agent group")]
    EmptyGroup,

    #[error("distribution has zero mean")]
    ZeroMean,

    #[error("total money changed from {expected} to {found} after {events} events")]
    ConservationViolated { expected: u64, found: u64, events: u64 },

    #[error("non-finite component at index {index} (t = {time})")]
    NonFiniteState { index: usize, time: f64 },

    #[error("equilibrium weight {value:e} at n = {index} is below the representable floor")]
    WeightUnderflow { index: usize, value: f64 },

    #[error("Gini denominator `{which}` = {value:e} is degenerate")]
    DegenerateDenominator { which: &'static str, value: f64 },

    #[error("sampled pair exceeds the equilibrium H value by {gap:e}")]
    MaximalityViolated { gap: f64, f: Vec<f64>, g: Vec<f64> },

    #[error("weighted Poincare inequality violated: lhs {lhs:e} > rhs {rhs:e}")]
    InequalityViolated { lhs: f64, rhs: f64, r: f64 },

    #[error("distribution is not normalized: mass = {mass}")]
    NotNormalized { mass: f64 },

    #[error("negative probability {value:e} at index {index}")]
    NegativeProbability { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParams { field, reason: reason.into() }
    }
}
