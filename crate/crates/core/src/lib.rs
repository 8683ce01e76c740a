//! Money-exchange game with honest players and probabilistic cheaters.
//!
//! The crate covers the stochastic N-agent process ([`abm`]), its truncated
//! mean-field ODE system ([`meanfield`]), the closed-form geometric-mixture
//! equilibrium ([`equilibrium`]), entropy and linearized-energy functionals
//! ([`lyapunov`]), and Gini analysis ([`analysis`]).
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar for the common case.

pub mod abm;
pub mod analysis;
pub mod equilibrium;
pub mod error;
pub mod io;
mod linalg;
pub mod lyapunov;
pub mod meanfield;
pub mod ode;
pub mod params;
pub mod pmf;
pub mod real;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;

pub type ModelParams64 = params::ModelParams<f64>;
pub type ModelParams32 = params::ModelParams<f32>;
pub type WealthPmf64 = pmf::WealthPmf<f64>;
pub type WealthPmf32 = pmf::WealthPmf<f32>;
pub type EquilibriumPair64 = equilibrium::EquilibriumPair<f64>;
pub type EquilibriumPair32 = equilibrium::EquilibriumPair<f32>;
pub type MeanFieldState64 = meanfield::MeanFieldState<f64>;
pub type MeanFieldState32 = meanfield::MeanFieldState<f32>;
pub type PerturbationPair64 = lyapunov::PerturbationPair<f64>;
