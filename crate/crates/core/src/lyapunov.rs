//! Entropy-type functional of the nonlinear flow, its production rate, and
//! the quadratic energy of the flow linearized around equilibrium.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::equilibrium::{solve_equilibrium_with_tol, suggested_n_max, EquilibriumPair};
use crate::error::{Error, Result};
use crate::linalg::solve_small;
use crate::meanfield::{birth_death_into, first_moment, rate_r, total, MeanFieldState, Observer};
use crate::ode::{rk4_step_in_place, step_plan, Rk4Workspace};
use crate::params::ModelParams;
use crate::pmf::WealthPmf;
use crate::real::{sum_compensated, Real};

// ---------------------------------------------------------------------------
// H functional

fn entropy<T: Real>(p: &[T]) -> T {
    sum_compensated(p.iter().map(|&x| if x > T::zero() { -x * x.ln() } else { T::zero() }))
}

/// `H = -n_c sum f log f - n_h sum g log g - n_c log(1 - gamma) sum n f` on raw
/// slices, with `0 log 0 = 0`.
pub fn h_functional_raw<T: Real>(params: &ModelParams<T>, f: &[T], g: &[T]) -> T {
    let mut h = T::zero();
    if params.n_c() > T::zero() {
        h += params.n_c() * (entropy(f) - params.give_prob().ln() * first_moment(f));
    }
    if params.n_h() > T::zero() {
        h += params.n_h() * entropy(g);
    }
    h
}

/// H functional of the pair `(p^c, p^h)`.
pub fn h_functional<T: Real>(pc: &WealthPmf<T>, ph: &WealthPmf<T>, params: &ModelParams<T>) -> T {
    h_functional_raw(params, pc.probs(), ph.probs())
}

/// `(a - b) log(a / b)` with both arguments floored; zero when both vanish.
fn log_flux_term<T: Real>(a: T, b: T) -> T {
    if a == T::zero() && b == T::zero() {
        return T::zero();
    }
    let floor = T::lit(T::PROB_FLOOR);
    (a - b) * (a.max(floor) / b.max(floor)).ln()
}

/// Closed-form production rate `dH/dt` of a mean-field state. Every term has
/// the form `(a - b) log(a / b) >= 0`.
pub fn h_production<T: Real>(state: &MeanFieldState<T>) -> T {
    let params = &state.params;
    let r = rate_r(state);
    let k = params.give_prob();
    let mut out = T::zero();
    if params.n_c() > T::zero() {
        let pc = state.pc.probs();
        let s = sum_compensated(pc.windows(2).map(|w| log_flux_term(w[1], r * w[0] / k)));
        out += k * params.n_c() * s;
    }
    if params.n_h() > T::zero() {
        let ph = state.ph.probs();
        let s = sum_compensated(ph.windows(2).map(|w| log_flux_term(w[1], r * w[0])));
        out += params.n_h() * s;
    }
    out
}

/// One row of an H trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HRow {
    pub time: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "H_equilibrium_minus_H")]
    pub gap: f64,
    pub production_rate: f64,
}

/// Observer recording `H`, its distance to the equilibrium value and the
/// closed-form production.
#[derive(Debug, Clone)]
pub struct HTrace {
    pub every: usize,
    pub h_equilibrium: f64,
    pub rows: Vec<HRow>,
}

impl HTrace {
    pub fn new<T: Real>(eq: &EquilibriumPair<T>, params: &ModelParams<T>, every: usize) -> Self {
        let h_eq = h_functional(eq.cheater_or_honest(), &eq.p_bar_h, params).as_f64();
        Self { every: every.max(1), h_equilibrium: h_eq, rows: Vec::new() }
    }
}

impl<T: Real> Observer<T> for HTrace {
    fn cadence(&self) -> usize {
        self.every
    }

    fn observe(&mut self, _step: usize, state: &MeanFieldState<T>) {
        let h = h_functional(&state.pc, &state.ph, &state.params).as_f64();
        self.rows.push(HRow {
            time: state.time.as_f64(),
            h,
            gap: self.h_equilibrium - h,
            production_rate: h_production(state).as_f64(),
        });
    }
}

// ---------------------------------------------------------------------------
// Maximum-entropy characterization

/// How a test pair for the maximality check was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    RandomPmf,
    TwoPoint,
    EquilibriumPerturbation,
}

/// Options for [`h_max_check`].
#[derive(Debug, Clone, Copy)]
pub struct MaxCheckOptions {
    /// Largest accepted excess of a sample over the equilibrium H.
    pub tolerance: f64,
    /// Also run a constrained Newton ascent from a generic start.
    pub ascent_cross_check: bool,
}

impl Default for MaxCheckOptions {
    fn default() -> Self {
        Self { tolerance: 1e-9, ascent_cross_check: false }
    }
}

/// Result of the constrained ascent cross-check.
#[derive(Debug, Clone, Serialize)]
pub struct AscentReport {
    pub iterations: usize,
    pub h_ascent: f64,
    pub h_equilibrium: f64,
    /// L1 distance of the ascent optimum to the truncated equilibrium, summed
    /// over both laws.
    pub l1_to_equilibrium: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxCheckReport {
    pub trials: usize,
    pub h_equilibrium: f64,
    /// `max(H[sample] - H[equilibrium])`, nonpositive when the check holds.
    pub max_gap: f64,
    pub worst_kind: Option<SampleKind>,
    pub counts: [usize; 3],
    pub ascent: Option<AscentReport>,
}

/// Monte Carlo check that the equilibrium pair maximizes H over all pairs of
/// laws with the prescribed joint mean.
///
/// Samples rotate over three families: random PMFs on a random support,
/// rescaled into the constraint set by mixing with a Dirac mass; two-point
/// laws; and equilibrium perturbations along random admissible directions,
/// scaled to stay nonnegative.
pub fn h_max_check<R: Rng + ?Sized>(
    params: &ModelParams<f64>,
    trials: usize,
    rng: &mut R,
    opts: MaxCheckOptions,
) -> Result<MaxCheckReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let n_max = suggested_n_max(params, 1e-20).max(40);
    let eq = solve_equilibrium_with_tol(params, n_max, 1e-20)?;
    let h_eq = h_functional(eq.cheater_or_honest(), &eq.p_bar_h, params);
    let mut report = MaxCheckReport {
        trials,
        h_equilibrium: h_eq,
        max_gap: f64::NEG_INFINITY,
        worst_kind: None,
        counts: [0; 3],
        ascent: None,
    };
    for t in 0..trials {
        let kind = match t % 3 {
            0 => SampleKind::RandomPmf,
            1 => SampleKind::TwoPoint,
            _ => SampleKind::EquilibriumPerturbation,
        };
        let (f, g) = match kind {
            SampleKind::RandomPmf => random_pair_in_constraint_set(params, rng),
            SampleKind::TwoPoint => two_point_pair(params, rng),
            SampleKind::EquilibriumPerturbation => perturbed_equilibrium(&eq, params, rng),
        };
        report.counts[t % 3] += 1;
        let gap = h_functional_raw(params, &f, &g) - h_eq;
        if gap > report.max_gap {
            report.max_gap = gap;
            report.worst_kind = Some(kind);
        }
        if gap > opts.tolerance {
            return Err(Error::MaximalityViolated { gap, f, g });
        }
    }
    if opts.ascent_cross_check {
        report.ascent = newton_max_entropy(params, &eq);
    }
    Ok(report)
}

fn random_weights<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    // Exponential weights give a uniform draw on the simplex; a random subset
    // of zeros keeps sparse laws in the mix.
    let sparse = rng.random_bool(0.3);
    let mut w: Vec<f64> = (0..len)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            if sparse && rng.random_bool(0.5) {
                0.0
            } else {
                e
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..len)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

fn mean_of(p: &[f64]) -> f64 {
    first_moment(p)
}

/// Random pair with `n_c mean(f) + n_h mean(g) = mu`.
pub fn random_pair_in_constraint_set<R: Rng + ?Sized>(params: &ModelParams<f64>, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mu = params.mu();
    let len_f = rng.random_range(1..=(4.0 * mu).ceil() as usize + 40);
    let len_g = rng.random_range(1..=(4.0 * mu).ceil() as usize + 40);
    let mut f = random_weights(len_f, rng);
    let mut g = random_weights(len_g, rng);
    let joint = params.n_c() * mean_of(&f) + params.n_h() * mean_of(&g);
    if joint > mu {
        let a = mu / joint;
        for p in f.iter_mut().chain(g.iter_mut()) {
            *p *= a;
        }
        f[0] += 1.0 - a;
        g[0] += 1.0 - a;
    } else if joint < mu {
        let top = mu.floor() as usize + 1;
        let a = (top as f64 - mu) / (top as f64 - joint);
        for v in [&mut f, &mut g] {
            if v.len() <= top {
                v.resize(top + 1, 0.0);
            }
            v.iter_mut().for_each(|p| *p *= a);
            v[top] += 1.0 - a;
        }
    }
    (f, g)
}

fn two_point_pair<R: Rng + ?Sized>(params: &ModelParams<f64>, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mu = params.mu();
    let (mean_f, mean_g) = if params.n_c() == 0.0 {
        (rng.random::<f64>() * 2.0 * mu, mu)
    } else if params.n_h() == 0.0 {
        (mu, rng.random::<f64>() * 2.0 * mu)
    } else {
        let a = rng.random::<f64>() * mu / params.n_c();
        (a, (mu - params.n_c() * a) / params.n_h())
    };
    let two_point = |m: f64| {
        WealthPmf::<f64>::two_point(m, m.floor() as usize + 1).expect("valid").into_probs()
    };
    (two_point(mean_f), two_point(mean_g))
}

fn perturbed_equilibrium<R: Rng + ?Sized>(
    eq: &EquilibriumPair<f64>,
    params: &ModelParams<f64>,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let support = rng.random_range(3..=30).min(eq.n_max());
    let w = sample_perturbation(eq, params, support, rng);
    let pc = eq.cheater_or_honest().probs();
    let ph = eq.p_bar_h.probs();
    // Largest step keeping both laws nonnegative.
    let mut eps_max = f64::INFINITY;
    for (p, d) in pc.iter().zip(&w.wc).chain(ph.iter().zip(&w.wh)) {
        if *d < 0.0 {
            eps_max = eps_max.min(p / -d);
        }
    }
    let eps = if eps_max.is_finite() { eps_max * rng.random::<f64>() } else { rng.random::<f64>() };
    let f = pc.iter().zip(&w.wc).map(|(p, d)| (p + eps * d).max(0.0)).collect();
    let g = ph.iter().zip(&w.wh).map(|(p, d)| (p + eps * d).max(0.0)).collect();
    (f, g)
}

/// Newton ascent of H under the two mass constraints and the joint-mean
/// constraint, restricted to the truncated support. `None` when one class is
/// empty (its variables carry no curvature).
pub fn newton_max_entropy(params: &ModelParams<f64>, eq: &EquilibriumPair<f64>) -> Option<AscentReport> {
    let (n_c, n_h) = (params.n_c(), params.n_h());
    if n_c == 0.0 || n_h == 0.0 {
        return None;
    }
    let m = eq.n_max() + 1;
    let ln_k = params.give_prob().ln();
    let start = {
        let q = params.mu() / (params.mu() + 1.0);
        let mut p: Vec<f64> = (0..m).map(|n| (1.0 - q) * q.powi(n as i32)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        p
    };
    let (mut f, mut g) = (start.clone(), start);
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        // Gradient and inverse Hessian (diagonal, negative).
        let grad_f: Vec<f64> = (0..m).map(|n| -n_c * (f[n].ln() + 1.0) - n_c * ln_k * n as f64).collect();
        let grad_g: Vec<f64> = (0..m).map(|n| -n_h * (g[n].ln() + 1.0)).collect();
        let s_f: Vec<f64> = f.iter().map(|x| -x / n_c).collect();
        let s_g: Vec<f64> = g.iter().map(|x| -x / n_h).collect();
        // Constraint rows: mass f, mass g, joint mean.
        let row = |k: usize, n: usize, is_f: bool| -> f64 {
            match (k, is_f) {
                (0, true) | (1, false) => 1.0,
                (0, false) | (1, true) => 0.0,
                (_, true) => n_c * n as f64,
                (_, false) => n_h * n as f64,
            }
        };
        let mut gram = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        let ax = [
            f.iter().sum::<f64>(),
            g.iter().sum::<f64>(),
            n_c * mean_of(&f) + n_h * mean_of(&g),
        ];
        let b = [1.0, 1.0, params.mu()];
        for i in 0..3 {
            rhs[i] = b[i] - ax[i];
            for n in 0..m {
                rhs[i] += row(i, n, true) * s_f[n] * grad_f[n] + row(i, n, false) * s_g[n] * grad_g[n];
                for j in 0..3 {
                    gram[i][j] += row(i, n, true) * s_f[n] * row(j, n, true)
                        + row(i, n, false) * s_g[n] * row(j, n, false);
                }
            }
        }
        let nu = solve_small(gram, rhs)?;
        let dir = |n: usize, is_f: bool| {
            let (s, gr) = if is_f { (s_f[n], grad_f[n]) } else { (s_g[n], grad_g[n]) };
            let at_nu: f64 = (0..3).map(|k| row(k, n, is_f) * nu[k]).sum();
            s * (at_nu - gr)
        };
        let df: Vec<f64> = (0..m).map(|n| dir(n, true)).collect();
        let dg: Vec<f64> = (0..m).map(|n| dir(n, false)).collect();
        let mut step: f64 = 1.0;
        for (x, d) in f.iter().zip(&df).chain(g.iter().zip(&dg)) {
            if *d < 0.0 {
                step = step.min(0.9 * x / -d);
            }
        }
        let mut size: f64 = 0.0;
        for n in 0..m {
            f[n] += step * df[n];
            g[n] += step * dg[n];
            size = size.max((df[n] / f[n]).abs()).max((dg[n] / g[n]).abs());
        }
        if step == 1.0 && size < 1e-12 {
            break;
        }
    }
    let pc = eq.cheater_or_honest().probs();
    let l1: f64 = f.iter().zip(pc).map(|(a, b)| (a - b).abs()).sum::<f64>()
        + g.iter().zip(eq.p_bar_h.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Some(AscentReport {
        iterations,
        h_ascent: h_functional_raw(params, &f, &g),
        h_equilibrium: h_functional(eq.cheater_or_honest(), &eq.p_bar_h, params),
        l1_to_equilibrium: l1,
    })
}

// ---------------------------------------------------------------------------
// Linearized dynamics

/// Perturbation `(w^c, w^h)` of the equilibrium pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationPair<T> {
    pub wc: Vec<T>,
    pub wh: Vec<T>,
}

/// Residuals of the three admissibility constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility<T> {
    pub mass_c: T,
    pub mass_h: T,
    pub weighted_mean: T,
}

impl<T: Real> Admissibility<T> {
    pub fn max_abs(&self) -> T {
        self.mass_c.abs().max(self.mass_h.abs()).max(self.weighted_mean.abs())
    }
}

impl<T: Real> PerturbationPair<T> {
    pub fn zeros(n_max: usize) -> Self {
        Self { wc: vec![T::zero(); n_max + 1], wh: vec![T::zero(); n_max + 1] }
    }

    pub fn n_max(&self) -> usize {
        self.wh.len() - 1
    }

    pub fn scaled(&self, k: T) -> Self {
        Self { wc: self.wc.iter().map(|&x| k * x).collect(), wh: self.wh.iter().map(|&x| k * x).collect() }
    }

    pub fn admissibility(&self, params: &ModelParams<T>) -> Admissibility<T> {
        Admissibility {
            mass_c: total(&self.wc),
            mass_h: total(&self.wh),
            weighted_mean: params.n_h() * first_moment(&self.wh) + params.n_c() * first_moment(&self.wc),
        }
    }

    fn to_vec(&self) -> Vec<T> {
        let mut y = self.wc.clone();
        y.extend_from_slice(&self.wh);
        y
    }

    fn from_slice(y: &[T]) -> Self {
        let m = y.len() / 2;
        Self { wc: y[..m].to_vec(), wh: y[m..].to_vec() }
    }
}

/// Linearized rate from the tail sums, `n_c (1-gamma) sum_{n>=1} w^c_n + n_h sum_{n>=1} w^h_n`.
pub fn r_w_tail<T: Real>(wc: &[T], wh: &[T], params: &ModelParams<T>) -> T {
    params.n_c() * params.give_prob() * total(&wc[1..]) + params.n_h() * total(&wh[1..])
}

/// Same quantity through the zero-mass identity, `-n_c (1-gamma) w^c_0 - n_h w^h_0`.
pub fn r_w_from_origin<T: Real>(wc: &[T], wh: &[T], params: &ModelParams<T>) -> T {
    -(params.n_c() * params.give_prob() * wc[0] + params.n_h() * wh[0])
}

fn linear_operator_into<T: Real>(w: &[T], pbar: &[T], r_bar: T, r_w: T, down: T, out: &mut [T]) {
    // Linearized flux across (n, n+1): r_bar w_n + r_w pbar_n - down w_{n+1}.
    birth_death_into(w, r_bar, down, out);
    for n in 0..w.len().saturating_sub(1) {
        let extra = r_w * pbar[n];
        out[n] -= extra;
        out[n + 1] += extra;
    }
}

fn linearized_field<T: Real>(eq: &EquilibriumPair<T>, params: &ModelParams<T>, y: &[T], dy: &mut [T]) {
    let m = y.len() / 2;
    let (wc, wh) = y.split_at(m);
    let (dwc, dwh) = dy.split_at_mut(m);
    let r_w = r_w_from_origin(wc, wh, params);
    linear_operator_into(wc, eq.cheater_or_honest().probs(), eq.r_bar, r_w, params.give_prob(), dwc);
    linear_operator_into(wh, eq.p_bar_h.probs(), eq.r_bar, r_w, T::one(), dwh);
}

/// Right-hand side of the flow linearized around `eq`, truncated like the
/// nonlinear operators (no flux out of `n_max`).
pub fn linearized_rhs<T: Real>(
    w: &PerturbationPair<T>,
    eq: &EquilibriumPair<T>,
    params: &ModelParams<T>,
) -> PerturbationPair<T> {
    let y = w.to_vec();
    let mut dy = vec![T::zero(); y.len()];
    linearized_field(eq, params, &y, &mut dy);
    PerturbationPair::from_slice(&dy)
}

fn check_weights<T: Real>(w: &[T], pbar: &[T]) -> Result<()> {
    let floor = T::lit(T::PROB_FLOOR);
    for (index, (x, p)) in w.iter().zip(pbar).enumerate() {
        if *x != T::zero() && *p < floor {
            return Err(Error::WeightUnderflow { index, value: p.as_f64() });
        }
    }
    Ok(())
}

/// Quadratic energy `n_c sum (w^c)^2 / pbar^c + n_h sum (w^h)^2 / pbar^h`.
pub fn energy_e<T: Real>(w: &PerturbationPair<T>, eq: &EquilibriumPair<T>, params: &ModelParams<T>) -> Result<T> {
    let pc = eq.cheater_or_honest().probs();
    let ph = eq.p_bar_h.probs();
    let mut e = T::zero();
    if params.n_c() > T::zero() {
        check_weights(&w.wc, pc)?;
        e += params.n_c() * weighted_square(&w.wc, pc);
    }
    if params.n_h() > T::zero() {
        check_weights(&w.wh, ph)?;
        e += params.n_h() * weighted_square(&w.wh, ph);
    }
    Ok(e)
}

fn weighted_square<T: Real>(w: &[T], p: &[T]) -> T {
    sum_compensated(w.iter().zip(p).map(|(&x, &q)| if x == T::zero() { T::zero() } else { x * x / q }))
}

fn weighted_diff_square<T: Real>(w: &[T], p: &[T]) -> T {
    sum_compensated(w.windows(2).zip(p).map(|(win, &q)| {
        let d = win[1] - win[0];
        if d == T::zero() {
            T::zero()
        } else {
            d * d / q
        }
    }))
}

/// Exact time derivative of [`energy_e`] along the linearized flow, for
/// admissible `w`:
///
/// `2 [ -n_h sum (w^h_{n+1} - w^h_n)^2 / pbar^h_n - n_c (1-gamma) sum (w^c_{n+1} - w^c_n)^2 / pbar^c_n
///      + n_h (w^h_0)^2 + n_c (1-gamma) (w^c_0)^2 + r_w^2 / r_bar ]`.
///
/// The factor two comes from differentiating the quadratic form; the
/// bracket alone is half the rate.
pub fn energy_dissipation_rate<T: Real>(
    w: &PerturbationPair<T>,
    eq: &EquilibriumPair<T>,
    params: &ModelParams<T>,
) -> T {
    let k = params.give_prob();
    let r_w = r_w_from_origin(&w.wc, &w.wh, params);
    let mut bracket = r_w * r_w / eq.r_bar;
    if params.n_h() > T::zero() {
        bracket += params.n_h() * (w.wh[0] * w.wh[0] - weighted_diff_square(&w.wh, eq.p_bar_h.probs()));
    }
    if params.n_c() > T::zero() {
        let pc = eq.cheater_or_honest().probs();
        bracket += params.n_c() * k * (w.wc[0] * w.wc[0] - weighted_diff_square(&w.wc, pc));
    }
    T::lit(2.0) * bracket
}

/// Random admissible perturbation: Gaussian noise on `0..=support`, shaped by
/// the equilibrium weights, then projected onto the admissible set along
/// directions `pbar * (a + b n)`.
pub fn sample_perturbation<R: Rng + ?Sized>(
    eq: &EquilibriumPair<f64>,
    params: &ModelParams<f64>,
    support: usize,
    rng: &mut R,
) -> PerturbationPair<f64> {
    let m = eq.n_max() + 1;
    let support = support.min(m - 1);
    let pc = eq.cheater_or_honest().probs();
    let ph = eq.p_bar_h.probs();
    let mut w = PerturbationPair::<f64>::zeros(m - 1);
    for n in 0..=support {
        let zc: f64 = StandardNormal.sample(rng);
        let zh: f64 = StandardNormal.sample(rng);
        w.wc[n] = if params.n_c() > 0.0 { zc * pc[n] } else { 0.0 };
        w.wh[n] = if params.n_h() > 0.0 { zh * ph[n] } else { 0.0 };
    }
    project_admissible(&mut w, eq, params);
    w
}

/// Projects `w` onto the admissible set, correcting along
/// `(pbar^c, 0)`, `(0, pbar^h)` and `(n_c n pbar^c, n_h n pbar^h)`.
/// Classes with zero weight are kept at zero.
pub fn project_admissible(w: &mut PerturbationPair<f64>, eq: &EquilibriumPair<f64>, params: &ModelParams<f64>) {
    let (n_c, n_h) = (params.n_c(), params.n_h());
    let pc = eq.cheater_or_honest().probs();
    let ph = eq.p_bar_h.probs();
    let m = w.wh.len();
    let use_c = n_c > 0.0;
    let use_h = n_h > 0.0;
    // Direction vectors as closures over index.
    let dir_c = |k: usize, n: usize| -> f64 {
        if !use_c {
            return 0.0;
        }
        match k {
            0 => pc[n],
            1 => 0.0,
            _ => n_c * n as f64 * pc[n],
        }
    };
    let dir_h = |k: usize, n: usize| -> f64 {
        if !use_h {
            return 0.0;
        }
        match k {
            0 => 0.0,
            1 => ph[n],
            _ => n_h * n as f64 * ph[n],
        }
    };
    let cons_c = |k: usize, n: usize| -> f64 {
        match k {
            0 => 1.0,
            1 => 0.0,
            _ => n_c * n as f64,
        }
    };
    let cons_h = |k: usize, n: usize| -> f64 {
        match k {
            0 => 0.0,
            1 => 1.0,
            _ => n_h * n as f64,
        }
    };
    let mut gram = [[0.0; 3]; 3];
    let mut resid = [0.0; 3];
    for i in 0..3 {
        for n in 0..m {
            resid[i] += cons_c(i, n) * w.wc[n] + cons_h(i, n) * w.wh[n];
            for j in 0..3 {
                gram[i][j] += cons_c(i, n) * dir_c(j, n) + cons_h(i, n) * dir_h(j, n);
            }
        }
    }
    // Only the active constraints enter the solve.
    let active: Vec<usize> = (0..3).filter(|&k| gram[k][k] != 0.0).collect();
    let coeffs = match active.len() {
        3 => solve_small(gram, resid),
        2 => {
            let (a, b) = (active[0], active[1]);
            solve_small([[gram[a][a], gram[a][b]], [gram[b][a], gram[b][b]]], [resid[a], resid[b]]).map(|x| {
                let mut c = [0.0; 3];
                c[a] = x[0];
                c[b] = x[1];
                c
            })
        }
        _ => None,
    };
    let Some(c) = coeffs else { return };
    for n in 0..m {
        for (k, ck) in c.iter().enumerate() {
            w.wc[n] -= ck * dir_c(k, n);
            w.wh[n] -= ck * dir_h(k, n);
        }
    }
}

/// One sample of a linearized-flow trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRow {
    pub time: f64,
    pub energy: f64,
    pub dissipation_rate: f64,
    pub admissibility_residual: f64,
}

/// RK4 integration of the linearized flow, recording the energy every
/// `every` steps.
pub fn integrate_linearized(
    w0: &PerturbationPair<f64>,
    eq: &EquilibriumPair<f64>,
    params: &ModelParams<f64>,
    t_end: f64,
    dt: f64,
    every: usize,
) -> Result<(PerturbationPair<f64>, Vec<EnergyRow>)> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    let every = every.max(1);
    let mut y = w0.to_vec();
    let mut ws = Rk4Workspace::new(y.len());
    let (steps, last) = step_plan(t_end, dt);
    let mut rows = Vec::new();
    let record = |y: &[f64], time: f64, rows: &mut Vec<EnergyRow>| -> Result<()> {
        let w = PerturbationPair::from_slice(y);
        rows.push(EnergyRow {
            time,
            energy: energy_e(&w, eq, params)?,
            dissipation_rate: energy_dissipation_rate(&w, eq, params),
            admissibility_residual: w.admissibility(params).max_abs(),
        });
        Ok(())
    };
    record(&y, 0.0, &mut rows)?;
    let mut time = 0.0;
    for k in 1..=steps {
        let h = if k == steps { last } else { dt };
        rk4_step_in_place(&mut y, h, &mut ws, |y, dy| linearized_field(eq, params, y, dy));
        time = if k == steps { t_end } else { time + h };
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { index, time });
        }
        if k % every == 0 || k == steps {
            record(&y, time, &mut rows)?;
        }
    }
    Ok((PerturbationPair::from_slice(&y), rows))
}

/// Centered finite difference of the energy along the linearized flow, using
/// one RK4 step forward and one backward.
pub fn energy_rate_finite_difference(
    w: &PerturbationPair<f64>,
    eq: &EquilibriumPair<f64>,
    params: &ModelParams<f64>,
    h: f64,
) -> Result<f64> {
    let mut ws = Rk4Workspace::new(2 * w.wh.len());
    let mut fwd = w.to_vec();
    let mut bwd = w.to_vec();
    rk4_step_in_place(&mut fwd, h, &mut ws, |y, dy| linearized_field(eq, params, y, dy));
    rk4_step_in_place(&mut bwd, -h, &mut ws, |y, dy| linearized_field(eq, params, y, dy));
    let e_f = energy_e(&PerturbationPair::from_slice(&fwd), eq, params)?;
    let e_b = energy_e(&PerturbationPair::from_slice(&bwd), eq, params)?;
    Ok((e_f - e_b) / (2.0 * h))
}

/// Least-squares slope of `-log E(t)`; a rough empirical decay rate.
/// Nothing is claimed about its value.
pub fn decay_rate_estimate(rows: &[EnergyRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.energy > 0.0).map(|r| (r.time, r.energy.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(-sxy / sxx)
}

// ---------------------------------------------------------------------------
// Weighted Poincare-type inequality for a geometric law

/// Both sides of `y_0^2 <= (1 - r) r^2 sum y_n^2 / p_n`, `p_n = (1 - r) r^n`.
pub fn poincare_sides(r: f64, y: &[f64]) -> (f64, f64) {
    let lhs = y[0] * y[0];
    let mut s = 0.0;
    let mut p = 1.0 - r;
    for &v in y {
        s += v * v / p;
        p *= r;
    }
    (lhs, (1.0 - r) * r * r * s)
}

/// Checks the inequality for one sequence with zero mass and zero mean.
pub fn weighted_poincare_check(r: f64, y: &[f64]) -> Result<(f64, f64)> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::param("r", "must lie in (0, 1)"));
    }
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale * y.len() as f64;
    if total(y).abs() > tol || first_moment(y).abs() > tol * y.len() as f64 {
        return Err(Error::param("y", "must have zero sum and zero first moment"));
    }
    let (lhs, rhs) = poincare_sides(r, y);
    if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::InequalityViolated { lhs, rhs, r });
    }
    Ok((lhs, rhs))
}

/// Random sequence on `0..=support` with zero mass and zero first moment.
pub fn sample_zero_moment_sequence<R: Rng + ?Sized>(support: usize, rng: &mut R) -> Vec<f64> {
    assert!(support >= 2, "need three points to satisfy two constraints");
    let mut y: Vec<f64> = (0..=support).map(|_| StandardNormal.sample(rng)).collect();
    let n = (support + 1) as f64;
    let s1: f64 = (0..=support).map(|k| k as f64).sum();
    let s2: f64 = (0..=support).map(|k| (k * k) as f64).sum();
    let b0 = total(&y);
    let b1 = first_moment(&y);
    let c = solve_small([[n, s1], [s1, s2]], [b0, b1]).expect("nonsingular");
    for (k, v) in y.iter_mut().enumerate() {
        *v -= c[0] + c[1] * k as f64;
    }
    y
}

/// `sum_{n>=1} (lambda n - 1)^2 p_n` for the geometric law with ratio `r`.
pub fn cauchy_schwarz_factor(r: f64, lambda: f64) -> f64 {
    let m = r / (1.0 - r);
    lambda * lambda * (m + 2.0 * m * m) - 2.0 * lambda * m + r
}

/// Near-extremal sequence `y_n = (lambda n - 1) p_n` for `n >= 1`, with `y_0`
/// fixing the zero mass; truncated at `support`.
pub fn extremal_sequence(r: f64, lambda: f64, support: usize) -> Vec<f64> {
    let mut y = vec![0.0; support + 1];
    let mut p = (1.0 - r) * r;
    for (n, v) in y.iter_mut().enumerate().skip(1) {
        *v = (lambda * n as f64 - 1.0) * p;
        p *= r;
    }
    y[0] = -total(&y[1..]);
    y
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareReport {
    pub trials: usize,
    pub violations: usize,
    /// Smallest observed `rhs / lhs` over samples with `lhs > 0`.
    pub min_ratio: f64,
    /// Numerically optimized multiplier against `1 / (1 + 2m)` at `r_probe`.
    pub r_probe: f64,
    pub lambda_numeric: f64,
    pub lambda_closed_form: f64,
    /// `rhs / lhs` for the extremal sequence at `r_probe` (close to one).
    pub extremal_ratio: f64,
}

/// Property check over random ratios and random admissible sequences, plus
/// the tightness probe at the Cauchy-Schwarz optimizer.
pub fn poincare_property<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> PoincareReport {
    let mut violations = 0;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..trials {
        let r = rng.random_range(0.02..0.98);
        let support = rng.random_range(2..=40);
        let y = sample_zero_moment_sequence(support, rng);
        let (lhs, rhs) = poincare_sides(r, &y);
        if lhs > rhs * (1.0 + 1e-12) {
            violations += 1;
        }
        if lhs > 0.0 {
            min_ratio = min_ratio.min(rhs / lhs);
        }
    }
    let r_probe = 0.6;
    let m = r_probe / (1.0 - r_probe);
    let lambda_closed_form = 1.0 / (1.0 + 2.0 * m);
    let lambda_numeric = golden_section_min(|l| cauchy_schwarz_factor(r_probe, l), -2.0, 2.0, 1e-12);
    let support = (60.0 / -r_probe.ln()).ceil() as usize;
    let (lhs, rhs) = poincare_sides(r_probe, &extremal_sequence(r_probe, lambda_closed_form, support));
    PoincareReport {
        trials,
        violations,
        min_ratio,
        r_probe,
        lambda_numeric,
        lambda_closed_form,
        extremal_ratio: rhs / lhs,
    }
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    while (b - a).abs() > tol {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_equilibrium;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams<f64> {
        ModelParams::mean_field(5.0, 0.5, 0.5).unwrap()
    }

    #[test]
    fn h_vanishes_on_broke_economy() {
        let p = WealthPmf::<f64>::dirac(0, 10).unwrap();
        assert_eq!(h_functional(&p, &p, &params()), 0.0);
    }

    #[test]
    fn h_is_shannon_entropy_without_cheaters() {
        let honest = ModelParams::mean_field(5.0, 1.0, 0.4).unwrap();
        let g = WealthPmf::new(vec![0.25, 0.25, 0.5]).unwrap();
        let f = WealthPmf::new(vec![0.0, 0.0, 1.0]).unwrap();
        let shannon = -(0.25f64.ln() * 0.5 + 0.5 * 0.5f64.ln());
        assert!((h_functional(&f, &g, &honest) - shannon).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_h_is_truncation_stable() {
        let h = |n_max| {
            let eq = solve_equilibrium(&params(), n_max).unwrap();
            h_functional(eq.p_bar_c.as_ref().unwrap(), &eq.p_bar_h, &params())
        };
        assert!((h(500) - h(1000)).abs() < 1e-9);
    }

    #[test]
    fn production_vanishes_at_equilibrium() {
        let eq = solve_equilibrium(&params(), 500).unwrap();
        let s = MeanFieldState::from_equilibrium(&eq, params());
        assert!(h_production(&s).abs() < 1e-12);
    }

    #[test]
    fn production_positive_off_equilibrium() {
        let s = MeanFieldState::dirac_at_mean(params(), 100).unwrap();
        assert!(h_production(&s) > 0.0);
    }

    #[test]
    fn r_w_forms_agree_on_admissible_input() {
        let eq = solve_equilibrium(&params(), 300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w = sample_perturbation(&eq, &params(), 25, &mut rng);
            assert!(w.admissibility(&params()).max_abs() < 1e-12);
            let a = r_w_tail(&w.wc, &w.wh, &params());
            let b = r_w_from_origin(&w.wc, &w.wh, &params());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_perturbation_is_inert() {
        let eq = solve_equilibrium(&params(), 300).unwrap();
        let w = PerturbationPair::zeros(300);
        assert_eq!(linearized_rhs(&w, &eq, &params()), w);
        assert_eq!(energy_e(&w, &eq, &params()).unwrap(), 0.0);
        assert_eq!(energy_dissipation_rate(&w, &eq, &params()), 0.0);
    }

    #[test]
    fn energy_is_quadratic() {
        let eq = solve_equilibrium(&params(), 300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = sample_perturbation(&eq, &params(), 10, &mut rng);
        let e1 = energy_e(&w, &eq, &params()).unwrap();
        let e2 = energy_e(&w.scaled(2.0), &eq, &params()).unwrap();
        assert!((e2 - 4.0 * e1).abs() < 1e-12 * e2);
    }

    #[test]
    fn energy_rejects_underflowing_weights() {
        let eq = solve_equilibrium(&params(), 1000).unwrap();
        let mut w = PerturbationPair::zeros(1000);
        w.wh[999] = 1e-300;
        assert!(matches!(energy_e(&w, &eq, &params()), Err(Error::WeightUnderflow { .. })));
    }

    #[test]
    fn poincare_hand_example() {
        let (lhs, rhs) = weighted_poincare_check(0.5, &[1.0, -2.0, 1.0]).unwrap();
        assert_eq!(lhs, 1.0);
        assert!((rhs - 3.25).abs() < 1e-14);
        assert_eq!(weighted_poincare_check(0.5, &[0.0, 0.0, 0.0]).unwrap(), (0.0, 0.0));
        assert!(weighted_poincare_check(0.5, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn extremal_sequence_is_nearly_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep = poincare_property(2000, &mut rng);
        assert_eq!(rep.violations, 0);
        assert!(rep.min_ratio >= 1.0 - 1e-12);
        assert!((rep.lambda_numeric - rep.lambda_closed_form).abs() < 1e-6);
        assert!((rep.extremal_ratio - 1.0).abs() < 1e-9, "{}", rep.extremal_ratio);
    }

    #[test]
    fn maximality_small_run_with_ascent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let opts = MaxCheckOptions { ascent_cross_check: true, ..Default::default() };
        let rep = h_max_check(&params(), 300, &mut rng, opts).unwrap();
        assert!(rep.max_gap <= 1e-9);
        let ascent = rep.ascent.unwrap();
        assert!((ascent.h_ascent - ascent.h_equilibrium).abs() < 1e-9, "{ascent:?}");
        assert!(ascent.l1_to_equilibrium < 1e-8, "{ascent:?}");
    }

    #[test]
    fn dirac_pair_sits_strictly_below_maximum() {
        let eq = solve_equilibrium(&params(), 500).unwrap();
        let h_eq = h_functional(eq.p_bar_c.as_ref().unwrap(), &eq.p_bar_h, &params());
        // 0.5 * 8 + 0.5 * 2 = 5
        let f = WealthPmf::dirac(8, 10).unwrap();
        let g = WealthPmf::dirac(2, 10).unwrap();
        assert!(h_functional(&f, &g, &params()) < h_eq - 0.1);
    }

    #[test]
    fn dissipation_rate_matches_flow_derivative() {
        let eq = solve_equilibrium(&params(), 300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let w = sample_perturbation(&eq, &params(), 30, &mut rng);
            let exact = energy_dissipation_rate(&w, &eq, &params());
            let fd = energy_rate_finite_difference(&w, &eq, &params(), 1e-4).unwrap();
            assert!(exact <= 0.0);
            assert!((exact - fd).abs() <= 1e-6 * exact.abs(), "{exact} vs {fd}");
        }
    }

    #[test]
    fn linearized_flow_stays_admissible() {
        let eq = solve_equilibrium(&params(), 300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = sample_perturbation(&eq, &params(), 20, &mut rng);
        let (_, rows) = integrate_linearized(&w, &eq, &params(), 5.0, 0.01, 10).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].energy <= pair[0].energy + 1e-10);
            assert!(pair[1].admissibility_residual < 1e-8);
        }
    }

    #[test]
    fn decay_rate_of_pure_exponential() {
        let rows: Vec<EnergyRow> = (0..10)
            .map(|k| EnergyRow {
                time: k as f64,
                energy: (-0.3 * k as f64).exp(),
                dissipation_rate: 0.0,
                admissibility_residual: 0.0,
            })
            .collect();
        assert!((decay_rate_estimate(&rows).unwrap() - 0.3).abs() < 1e-12);
    }
}
