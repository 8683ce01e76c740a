//! Gini index, distances between laws, and equilibrium Gini sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::equilibrium_ratio;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::pmf::WealthPmf;
use crate::real::{sum_compensated, Real};

/// Smallest accepted denominator in the closed-form equilibrium Gini.
pub const DENOMINATOR_FLOOR: f64 = 1e-14;

/// `G = 1 - (1/mu) sum_n (1 - F_n)^2`, with the survival function summed from
/// the top for accuracy.
pub fn gini_pmf<T: Real>(p: &WealthPmf<T>) -> Result<T> {
    let mu = p.mean();
    if !(mu > T::zero()) {
        return Err(Error::ZeroMean);
    }
    let s = sum_compensated(p.survival().into_iter().map(|x| x * x));
    Ok(T::one() - s / mu)
}

/// `G = (1 / (2 mu)) sum_{i,j} |i - j| p_i p_j`, quadratic in the support.
pub fn gini_double_sum<T: Real>(p: &WealthPmf<T>) -> Result<T> {
    let mu = p.mean();
    if !(mu > T::zero()) {
        return Err(Error::ZeroMean);
    }
    let probs = p.probs();
    let mut acc = T::zero();
    for (i, &pi) in probs.iter().enumerate() {
        for (j, &pj) in probs.iter().enumerate().skip(i + 1) {
            acc += T::from_usize_lossy(j - i) * pi * pj;
        }
    }
    // Off-diagonal pairs appear twice in the full double sum.
    Ok(acc / mu)
}

/// The three denominators of the closed form, in order
/// `(1-gamma)^2 - r^2`, `1 - r^2`, `1 - gamma - r^2`.
pub fn gini_denominators<T: Real>(params: &ModelParams<T>, r_bar: T) -> [T; 3] {
    let k = params.give_prob();
    let r2 = r_bar * r_bar;
    [k * k - r2, T::one() - r2, k - r2]
}

/// Closed-form Gini index of the equilibrium mixture.
pub fn gini_equilibrium<T: Real>(params: &ModelParams<T>) -> Result<T> {
    gini_equilibrium_at(params, equilibrium_ratio(params))
}

fn gini_equilibrium_at<T: Real>(params: &ModelParams<T>, r_bar: T) -> Result<T> {
    const NAMES: [&str; 3] = ["(1-gamma)^2 - r^2", "1 - r^2", "1 - gamma - r^2"];
    let (n_c, n_h) = (params.n_c(), params.n_h());
    let weights = [n_c * n_c, n_h * n_h, T::lit(2.0) * n_c * n_h];
    let dens = gini_denominators(params, r_bar);
    let r2 = r_bar * r_bar;
    let mut bracket = T::zero();
    for ((w, d), which) in weights.into_iter().zip(dens).zip(NAMES) {
        if w == T::zero() {
            continue;
        }
        if d < T::lit(DENOMINATOR_FLOOR) {
            return Err(Error::DegenerateDenominator { which, value: d.as_f64() });
        }
        bracket += w * r2 / d;
    }
    Ok(T::one() - bracket / params.mu())
}

/// One grid point of a Gini sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub r_bar: f64,
    pub gini: f64,
    pub mean_cheater: f64,
    pub mean_honest: f64,
    /// Smallest active denominator of the closed form.
    pub denominator_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GiniSweepResult {
    pub params_base: ModelParams<f64>,
    pub gamma_grid: Vec<f64>,
    pub gini_values: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub adjacent_decreases: usize,
}

/// `n` equally spaced points `0, 1/n, ..., (n-1)/n` of `[0, 1)`.
pub fn uniform_gamma_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / n as f64).collect()
}

/// Equilibrium Gini along a sorted `gamma` grid, evaluated in parallel.
pub fn gini_sweep(mu: f64, n_h: f64, gamma_grid: &[f64]) -> Result<GiniSweepResult> {
    if gamma_grid.is_empty() {
        return Err(Error::param("gamma_grid", "must not be empty"));
    }
    if gamma_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("gamma_grid", "must be sorted"));
    }
    let params_base = ModelParams::mean_field(mu, n_h, gamma_grid[0])?;
    let points = gamma_grid
        .par_iter()
        .map(|&gamma| sweep_point(&params_base.with_gamma(gamma)?))
        .collect::<Result<Vec<_>>>()?;
    let gini_values: Vec<f64> = points.iter().map(|p| p.gini).collect();
    let adjacent_decreases = gini_values.windows(2).filter(|w| w[1] < w[0]).count();
    Ok(GiniSweepResult { params_base, gamma_grid: gamma_grid.to_vec(), gini_values, points, adjacent_decreases })
}

fn sweep_point(params: &ModelParams<f64>) -> Result<SweepPoint> {
    let r = equilibrium_ratio(params);
    let k = params.give_prob();
    let dens = gini_denominators(params, r);
    let active = [params.n_c() > 0.0, params.n_h() > 0.0, params.n_c() * params.n_h() > 0.0];
    let margin = dens.iter().zip(active).filter(|(_, a)| *a).map(|(d, _)| *d).fold(f64::INFINITY, f64::min);
    Ok(SweepPoint {
        gamma: params.gamma(),
        r_bar: r,
        gini: gini_equilibrium_at(params, r)?,
        mean_cheater: if params.n_c() > 0.0 { r / (k - r) } else { f64::NAN },
        mean_honest: r / (1.0 - r),
        denominator_margin: margin,
    })
}

/// Distance between two laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    Tv,
    Linf,
}

/// Distance on zero-padded supports.
pub fn distance<T: Real>(p: &WealthPmf<T>, q: &WealthPmf<T>, metric: Metric) -> T {
    distance_slices(p.probs(), q.probs(), metric)
}

pub fn distance_slices<T: Real>(p: &[T], q: &[T], metric: Metric) -> T {
    let n = p.len().max(q.len());
    let diff = (0..n).map(|i| {
        let a = p.get(i).copied().unwrap_or_else(T::zero);
        let b = q.get(i).copied().unwrap_or_else(T::zero);
        (a - b).abs()
    });
    match metric {
        Metric::L1 => sum_compensated(diff),
        Metric::Tv => sum_compensated(diff) / T::lit(2.0),
        Metric::Linf => diff.fold(T::zero(), T::max),
    }
}
