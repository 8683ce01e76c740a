use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Default population size used when a config omits `n_agents`.
pub const DEFAULT_AGENTS: usize = 2000;

/// Parameters of one economy: average wealth, honest fraction, cheat
/// probability and (for the agent-based model) the number of agents.
///
/// The cheater fraction is always derived as `1 - n_h` and never stored on
/// the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams<T>", into = "RawParams<T>")]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct ModelParams<T> {
    mu: T,
    n_h: T,
    n_c: T,
    gamma: T,
    n_agents: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams<T> {
    mu: T,
    n_h: T,
    gamma: T,
    #[serde(default = "default_agents")]
    n_agents: usize,
}

fn default_agents() -> usize {
    DEFAULT_AGENTS
}

impl<T: Real> TryFrom<RawParams<T>> for ModelParams<T> {
    type Error = Error;

    fn try_from(raw: RawParams<T>) -> Result<Self> {
        ModelParams::new(raw.mu, raw.n_h, raw.gamma, raw.n_agents)
    }
}

impl<T: Real> From<ModelParams<T>> for RawParams<T> {
    fn from(p: ModelParams<T>) -> Self {
        RawParams { mu: p.mu, n_h: p.n_h, gamma: p.gamma, n_agents: p.n_agents }
    }
}

impl<T: Real> ModelParams<T> {
    pub fn new(mu: T, n_h: T, gamma: T, n_agents: usize) -> Result<Self> {
        if !(mu.is_finite() && mu > T::zero()) {
            return Err(Error::param("mu", format!("must be a positive finite number, got {mu}")));
        }
        if !(n_h >= T::zero() && n_h <= T::one()) {
            return Err(Error::param("n_h", format!("must lie in [0, 1], got {n_h}")));
        }
        if !(gamma >= T::zero() && gamma < T::one()) {
            return Err(Error::param("gamma", format!("must lie in [0, 1), got {gamma}")));
        }
        if n_agents < 2 {
            return Err(Error::param("n_agents", format!("must be at least 2, got {n_agents}")));
        }
        Ok(Self { mu, n_h, n_c: T::one() - n_h, gamma, n_agents })
    }

    /// Mean-field parameters; the population size is left at its default.
    pub fn mean_field(mu: T, n_h: T, gamma: T) -> Result<Self> {
        Self::new(mu, n_h, gamma, DEFAULT_AGENTS)
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn n_h(&self) -> T {
        self.n_h
    }

    pub fn n_c(&self) -> T {
        self.n_c
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Rate at which a solvent cheater actually hands over a dollar.
    pub fn give_prob(&self) -> T {
        T::one() - self.gamma
    }

    pub fn with_gamma(&self, gamma: T) -> Result<Self> {
        Self::new(self.mu, self.n_h, gamma, self.n_agents)
    }

    pub fn with_agents(&self, n_agents: usize) -> Result<Self> {
        Self::new(self.mu, self.n_h, self.gamma, n_agents)
    }

    /// Number of honest agents, `n_h * N`, which must be an integer.
    pub fn honest_count(&self) -> Result<usize> {
        let exact = self.n_h * T::from_usize_lossy(self.n_agents);
        let rounded = exact.round();
        if (exact - rounded).abs() > T::lit(1e-6) {
            return Err(Error::param(
                "n_h",
                format!("n_h * n_agents = {exact} is not an integer"),
            ));
        }
        Ok(rounded.to_usize().expect("nonnegative"))
    }

    /// Total money `N * mu` in the closed agent-based economy.
    pub fn total_money(&self) -> Result<u64> {
        let exact = self.mu * T::from_usize_lossy(self.n_agents);
        let rounded = exact.round();
        if (exact - rounded).abs() > T::lit(1e-6) {
            return Err(Error::param("mu", format!("mu * n_agents = {exact} is not an integer")));
        }
        Ok(rounded.to_u64().expect("nonnegative"))
    }

    /// Cast to another scalar type.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            mu: U::lit(self.mu.as_f64()),
            n_h: U::lit(self.n_h.as_f64()),
            n_c: U::one() - U::lit(self.n_h.as_f64()),
            gamma: U::lit(self.gamma.as_f64()),
            n_agents: self.n_agents,
        }
    }
}

impl Default for ModelParams<f64> {
    /// The reference economy: mu = 5, half honest, gamma = 0.5, 2000 agents.
    fn default() -> Self {
        ModelParams::new(5.0, 0.5, 0.5, DEFAULT_AGENTS).expect("valid defaults")
    }
}
