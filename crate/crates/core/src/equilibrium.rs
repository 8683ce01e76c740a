//! Closed-form stationary state of the mean-field system: a pair of geometric
//! laws whose common parameter solves a quadratic.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::pmf::{geometric_pmf, mix, WealthPmf};
use crate::real::Real;

/// Default bound on the geometric mass dropped by truncation.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Stationary laws of the two sub-populations and of the whole economy.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Real + Serialize"))]
pub struct EquilibriumPair<T> {
    /// Effective giving rate at equilibrium.
    pub r_bar: T,
    /// Honest law, geometric with ratio `r_bar`.
    pub p_bar_h: WealthPmf<T>,
    /// Cheater law, geometric with ratio `r_bar / (1 - gamma)`. Absent when
    /// there are no cheaters: the honest rate may then exceed `1 - gamma`.
    pub p_bar_c: Option<WealthPmf<T>>,
    /// `n_c * p_bar_c + n_h * p_bar_h`.
    pub p_bar_mix: WealthPmf<T>,
}

impl<T: Real> EquilibriumPair<T> {
    pub fn honest_ratio(&self) -> T {
        self.r_bar
    }

    /// `r_bar / (1 - gamma)`.
    pub fn cheater_ratio(&self, params: &ModelParams<T>) -> T {
        self.r_bar / params.give_prob()
    }

    /// Untruncated honest mean `r / (1 - r)`.
    pub fn mean_honest(&self) -> T {
        self.r_bar / (T::one() - self.r_bar)
    }

    /// Untruncated cheater mean `r / (1 - gamma - r)`; infinite without cheaters
    /// when the ratio leaves `[0, 1)`.
    pub fn mean_cheater(&self, params: &ModelParams<T>) -> T {
        let d = params.give_prob() - self.r_bar;
        if d > T::zero() {
            self.r_bar / d
        } else {
            T::infinity()
        }
    }

    /// Cheater law, or the honest law as a stand-in when the cheater class is
    /// empty (it carries zero weight in every functional).
    pub fn cheater_or_honest(&self) -> &WealthPmf<T> {
        self.p_bar_c.as_ref().unwrap_or(&self.p_bar_h)
    }

    pub fn n_max(&self) -> usize {
        self.p_bar_h.n_max()
    }
}

/// Coefficients `(a, b, c)` of `a r^2 - b r + c = 0`.
pub fn quadratic_coeffs<T: Real>(params: &ModelParams<T>) -> (T, T, T) {
    let (mu, g, n_h) = (params.mu(), params.gamma(), params.n_h());
    let one = T::one();
    let two = T::lit(2.0);
    (mu + one, (two - g) * mu + (one - g * n_h), (one - g) * mu)
}

/// Value of the equilibrium quadratic at `r`.
pub fn quadratic_residual<T: Real>(params: &ModelParams<T>, r: T) -> T {
    let (a, b, c) = quadratic_coeffs(params);
    (a * r - b) * r + c
}

pub fn discriminant<T: Real>(params: &ModelParams<T>) -> T {
    let (a, b, c) = quadratic_coeffs(params);
    b * b - T::lit(4.0) * a * c
}

/// Both roots, smaller first. Computed without subtractive cancellation.
pub fn quadratic_roots<T: Real>(params: &ModelParams<T>) -> (T, T) {
    let (a, b, c) = quadratic_coeffs(params);
    let sq = discriminant(params).max(T::zero()).sqrt();
    let q = b + sq;
    let small = T::lit(2.0) * c / q;
    let large = q / (T::lit(2.0) * a);
    (small, large)
}

/// Bisection on the quadratic over `(0, 1 - gamma)`, where it changes sign.
pub fn bisect_ratio<T: Real>(params: &ModelParams<T>) -> T {
    let mut lo = T::zero();
    let mut hi = params.give_prob();
    for _ in 0..200 {
        let mid = T::lit(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if quadratic_residual(params, mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    T::lit(0.5) * (lo + hi)
}

/// The equilibrium rate `r_bar`.
///
/// With cheaters present this is the root of the quadratic inside
/// `(0, 1 - gamma)`, taken from the minus branch and checked against the
/// bracket, with bisection as fallback. With no cheaters the economy is the
/// classical game and `r_bar = mu / (mu + 1)` regardless of `gamma`.
pub fn equilibrium_ratio<T: Real>(params: &ModelParams<T>) -> T {
    if params.n_c() == T::zero() {
        return params.mu() / (params.mu() + T::one());
    }
    let (r, _) = quadratic_roots(params);
    let slack = T::lit(1e-12);
    if r > T::zero() && r < params.give_prob() && r.is_finite() {
        r
    } else if r > -slack && r < params.give_prob() + slack {
        log::debug!("minus-branch root {r} slightly outside bracket; bisecting");
        bisect_ratio(params)
    } else {
        log::warn!("minus-branch root {r} outside (0, 1 - gamma); bisecting");
        bisect_ratio(params)
    }
}

/// Smallest `n_max` for which both geometric tails are below `tol`.
pub fn suggested_n_max<T: Real>(params: &ModelParams<T>, tol: f64) -> usize {
    let r = equilibrium_ratio(params).as_f64();
    let mut ratio = r;
    if params.n_c() > T::zero() {
        ratio = ratio.max(r / params.give_prob().as_f64());
    }
    if ratio <= 0.0 {
        return 1;
    }
    // ratio^(n + 1) < tol
    let n = (tol.ln() / ratio.ln()).ceil() as usize;
    n.max(1)
}

/// Solves for the stationary pair, truncated to `0..=n_max` and renormalized.
pub fn solve_equilibrium<T: Real>(params: &ModelParams<T>, n_max: usize) -> Result<EquilibriumPair<T>> {
    solve_equilibrium_with_tol(params, n_max, DEFAULT_TAIL_TOL)
}

pub fn solve_equilibrium_with_tol<T: Real>(
    params: &ModelParams<T>,
    n_max: usize,
    tail_tol: f64,
) -> Result<EquilibriumPair<T>> {
    if !(params.mu() > T::zero()) {
        return Err(Error::param("mu", "must be positive"));
    }
    let r_bar = equilibrium_ratio(params);
    let honest = truncated(r_bar, n_max, tail_tol)?;
    let cheater = if params.n_c() > T::zero() {
        Some(truncated(r_bar / params.give_prob(), n_max, tail_tol)?)
    } else {
        None
    };
    let p_bar_mix = match &cheater {
        Some(pc) => mix(pc, &honest, params)?,
        None => honest.clone(),
    };
    Ok(EquilibriumPair { r_bar, p_bar_h: honest, p_bar_c: cheater, p_bar_mix })
}

fn truncated<T: Real>(ratio: T, n_max: usize, tail_tol: f64) -> Result<WealthPmf<T>> {
    let g = geometric_pmf(ratio, n_max)?;
    let tail = g.tail_mass.as_f64();
    if tail > tail_tol {
        return Err(Error::TailTooHeavy { n_max, tail, tol: tail_tol });
    }
    g.pmf.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(mu: f64, n_h: f64, gamma: f64) -> ModelParams<f64> {
        ModelParams::mean_field(mu, n_h, gamma).unwrap()
    }

    #[test]
    fn pure_honest_ignores_gamma() {
        for gamma in [0.0, 0.3, 0.9] {
            let r = equilibrium_ratio(&p(5.0, 1.0, gamma));
            assert_relative_eq!(r, 5.0 / 6.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn no_cheating_reduces_to_classical_rate() {
        let r = equilibrium_ratio(&p(5.0, 0.5, 0.0));
        assert_relative_eq!(r, 5.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn all_cheaters_closed_form() {
        let params = p(4.0, 0.0, 0.25);
        let r = equilibrium_ratio(&params);
        assert_relative_eq!(r, 0.75 * 4.0 / 5.0, epsilon = 1e-14);
    }

    #[test]
    fn reference_economy() {
        let params = p(5.0, 0.5, 0.5);
        let eq = solve_equilibrium(&params, 500).unwrap();
        assert!((eq.r_bar - 0.450_878_818_924_988_6).abs() < 1e-12);
        assert!(quadratic_residual(&params, eq.r_bar).abs() < 1e-12);
        assert!((eq.mean_honest() - 0.8211).abs() < 1e-4);
        assert!((eq.mean_cheater(&params) - 9.178).abs() < 1e-3);
        let m = 0.5 * eq.mean_honest() + 0.5 * eq.mean_cheater(&params);
        assert!((m - 5.0).abs() < 1e-10);
        let m = 0.5 * eq.p_bar_h.mean() + 0.5 * eq.p_bar_c.as_ref().unwrap().mean();
        assert!((m - 5.0).abs() < 1e-8);
    }

    #[test]
    fn equilibrium_pmfs_are_geometric() {
        let params = p(5.0, 0.5, 0.5);
        let eq = solve_equilibrium(&params, 500).unwrap();
        let q = eq.cheater_ratio(&params);
        let pc = eq.p_bar_c.as_ref().unwrap();
        for n in [0usize, 1, 10, 100] {
            assert_relative_eq!(eq.p_bar_h.get(n), (1.0 - eq.r_bar) * eq.r_bar.powi(n as i32), max_relative = 1e-12);
            assert_relative_eq!(pc.get(n), (1.0 - q) * q.powi(n as i32), max_relative = 1e-12);
        }
        assert!((eq.p_bar_mix.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_truncation_is_rejected() {
        let err = solve_equilibrium(&p(5.0, 0.5, 0.5), 50).unwrap_err();
        assert!(matches!(err, Error::TailTooHeavy { n_max: 50, .. }));
    }

    #[test]
    fn suggested_bound_is_sufficient() {
        let params = p(5.0, 0.5, 0.5);
        let n = suggested_n_max(&params, 1e-12);
        assert!(solve_equilibrium(&params, n).is_ok());
        assert!(solve_equilibrium(&params, n - 2).is_err());
    }

    #[test]
    fn pure_honest_has_no_cheater_law() {
        let eq = solve_equilibrium(&p(5.0, 1.0, 0.3), 400).unwrap();
        assert!(eq.p_bar_c.is_none());
        assert_eq!(eq.p_bar_mix, eq.p_bar_h);
    }

    #[test]
    fn bisection_agrees_with_closed_form() {
        let params = p(3.0, 0.2, 0.7);
        assert!((bisect_ratio(&params) - equilibrium_ratio(&params)).abs() < 1e-14);
    }

    #[test]
    fn works_in_single_precision() {
        let params = ModelParams::<f32>::mean_field(5.0, 0.5, 0.5).unwrap();
        let r = equilibrium_ratio(&params);
        assert!((r - 0.450_878_8).abs() < 1e-5);
        let eq = solve_equilibrium_with_tol(&params, 400, 1e-7).unwrap();
        assert!((eq.p_bar_mix.mean() - 5.0).abs() < 1e-3);
    }
}
