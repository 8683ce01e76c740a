//! Truncated mean-field dynamics of the honest and cheater wealth laws.
//!
//! Each law follows a birth-death chain on `0..=n_max`: a dollar arrives at
//! rate `r` (the effective giving rate of the whole population) and leaves at
//! rate `1` for honest agents, `1 - gamma` for cheaters. The upward flux out of
//! the top bin is suppressed, so total mass is conserved exactly while the
//! weighted mean may leak by the (tiny) flux that would cross `n_max`.

use serde::Serialize;

use crate::equilibrium::EquilibriumPair;
use crate::error::{Error, Result};
use crate::ode::{rk4_step_in_place, step_plan, Rk4Workspace};
use crate::params::ModelParams;
use crate::pmf::{mix, WealthPmf};
use crate::real::{sum_compensated, Real};

/// Default truncation bound.
pub const DEFAULT_N_MAX: usize = 500;
/// Default RK4 step.
pub const DEFAULT_DT: f64 = 0.01;

/// Pair of laws `(p^c, p^h)` at time `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState<T> {
    pub pc: WealthPmf<T>,
    pub ph: WealthPmf<T>,
    pub params: ModelParams<T>,
    pub time: T,
}

impl<T: Real> MeanFieldState<T> {
    pub fn new(pc: WealthPmf<T>, ph: WealthPmf<T>, params: ModelParams<T>) -> Result<Self> {
        if pc.len() != ph.len() {
            return Err(Error::LengthMismatch { left: pc.len(), right: ph.len() });
        }
        pc.validate()?;
        ph.validate()?;
        Ok(Self { pc, ph, params, time: T::zero() })
    }

    /// Both laws concentrated at `mu` (split over the two nearest integers
    /// when `mu` is fractional).
    pub fn dirac_at_mean(params: ModelParams<T>, n_max: usize) -> Result<Self> {
        let p = WealthPmf::two_point(params.mu(), n_max)?;
        Self::new(p.clone(), p, params)
    }

    pub fn from_equilibrium(eq: &EquilibriumPair<T>, params: ModelParams<T>) -> Self {
        Self {
            pc: eq.cheater_or_honest().clone(),
            ph: eq.p_bar_h.clone(),
            params,
            time: T::zero(),
        }
    }

    pub fn n_max(&self) -> usize {
        self.ph.n_max()
    }

    pub fn mixture(&self) -> WealthPmf<T> {
        mix(&self.pc, &self.ph, &self.params).expect("equal lengths by construction")
    }

    /// `n_h * mean(p^h) + n_c * mean(p^c)`.
    pub fn weighted_mean(&self) -> T {
        self.params.n_h() * self.ph.mean() + self.params.n_c() * self.pc.mean()
    }
}

/// Effective giving rate `n_c (1 - gamma) r_c + n_h r_h` on raw slices.
pub fn giving_rate<T: Real>(params: &ModelParams<T>, pc: &[T], ph: &[T]) -> T {
    let r_c = T::one() - pc[0];
    let r_h = T::one() - ph[0];
    params.n_c() * params.give_prob() * r_c + params.n_h() * r_h
}

/// Effective giving rate of a state.
pub fn rate_r<T: Real>(state: &MeanFieldState<T>) -> T {
    giving_rate(&state.params, state.pc.probs(), state.ph.probs())
}

/// Writes the birth-death generator applied to `p` into `out` (overwriting).
///
/// `J_n = up * p_n - down * p_{n+1}` is the net flux across the edge
/// `(n, n+1)`, and `out_n = J_{n-1} - J_n`. No edge leaves `n_max`.
pub fn birth_death_into<T: Real>(p: &[T], up: T, down: T, out: &mut [T]) {
    debug_assert_eq!(p.len(), out.len());
    out.iter_mut().for_each(|o| *o = T::zero());
    for n in 0..p.len().saturating_sub(1) {
        let flux = up * p[n] - down * p[n + 1];
        out[n] -= flux;
        out[n + 1] += flux;
    }
}

/// Honest operator: arrivals at rate `r`, departures at rate one.
pub fn apply_lh<T: Real>(ph: &[T], r: T) -> Vec<T> {
    let mut out = vec![T::zero(); ph.len()];
    birth_death_into(ph, r, T::one(), &mut out);
    out
}

/// Cheater operator: arrivals at rate `r`, departures at rate `1 - gamma`.
pub fn apply_lc<T: Real>(pc: &[T], r: T, gamma: T) -> Vec<T> {
    let mut out = vec![T::zero(); pc.len()];
    birth_death_into(pc, r, T::one() - gamma, &mut out);
    out
}

/// Coupled vector field on the concatenated `[p^c | p^h]` vector.
pub fn vector_field<T: Real>(params: &ModelParams<T>, y: &[T], dy: &mut [T]) {
    let m = y.len() / 2;
    let (pc, ph) = y.split_at(m);
    let (dpc, dph) = dy.split_at_mut(m);
    let r = giving_rate(params, pc, ph);
    birth_death_into(pc, r, params.give_prob(), dpc);
    birth_death_into(ph, r, T::one(), dph);
}

/// Stateful stepper reusing its RK4 buffers.
#[derive(Debug, Clone)]
pub struct MeanFieldStepper<T> {
    ws: Rk4Workspace<T>,
    y: Vec<T>,
}

impl<T: Real> MeanFieldStepper<T> {
    pub fn new(n_max: usize) -> Self {
        let n = 2 * (n_max + 1);
        Self { ws: Rk4Workspace::new(n), y: vec![T::zero(); n] }
    }

    /// Advances `state` by `dt` with `r` re-evaluated at each RK4 stage.
    pub fn step(&mut self, state: &mut MeanFieldState<T>, dt: T) -> Result<()> {
        let m = state.ph.len();
        self.y.resize(2 * m, T::zero());
        self.y[..m].copy_from_slice(state.pc.probs());
        self.y[m..].copy_from_slice(state.ph.probs());
        let params = state.params;
        rk4_step_in_place(&mut self.y, dt, &mut self.ws, |y, dy| vector_field(&params, y, dy));
        state.time += dt;

        for (index, v) in self.y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteState { index, time: state.time.as_f64() });
            }
        }
        let (pc, ph) = self.y.split_at(m);
        state.pc.probs_mut().copy_from_slice(pc);
        state.ph.probs_mut().copy_from_slice(ph);
        let time = state.time;
        sanitize(&mut state.pc, "p^c", time);
        sanitize(&mut state.ph, "p^h", time);
        Ok(())
    }
}

fn sanitize<T: Real>(p: &mut WealthPmf<T>, label: &str, time: T) {
    for (n, v) in p.probs_mut().iter_mut().enumerate() {
        if *v < T::zero() {
            if *v < -T::lit(T::NEG_TOL) {
                log::warn!("clamping {label}[{n}] = {v:e} at t = {time}");
            } else {
                log::debug!("clamping round-off {label}[{n}] = {v:e} at t = {time}");
            }
            *v = T::zero();
        }
    }
    let mass = p.mass();
    if (mass - T::one()).abs() > T::lit(T::MASS_TOL) {
        log::warn!("renormalizing {label}: mass drifted to {mass} at t = {time}");
        p.scale(T::one() / mass);
    }
}

/// One RK4 step returning the advanced state.
pub fn rk4_step<T: Real>(state: &MeanFieldState<T>, dt: T) -> Result<MeanFieldState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::param("dt", "must be positive"));
    }
    let mut next = state.clone();
    MeanFieldStepper::new(state.n_max()).step(&mut next, dt)?;
    Ok(next)
}

/// Read-only callback invoked during [`integrate`].
pub trait Observer<T: Real> {
    /// Call every `cadence` steps (the initial and final states are always
    /// observed).
    fn cadence(&self) -> usize {
        1
    }

    fn observe(&mut self, step: usize, state: &MeanFieldState<T>);
}

/// Integration outcome.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub final_state: MeanFieldState<T>,
    pub steps: usize,
}

/// Integrates from `initial` to `initial.time + t_end` with fixed step `dt`
/// (the last step is shortened to land exactly on the end time).
pub fn integrate<T: Real>(
    initial: &MeanFieldState<T>,
    t_end: T,
    dt: T,
    observers: &mut [&mut dyn Observer<T>],
) -> Result<Trajectory<T>> {
    if !(dt > T::zero()) {
        return Err(Error::param("dt", "must be positive"));
    }
    if t_end < T::zero() {
        return Err(Error::param("t_end", "must be nonnegative"));
    }
    let mut state = initial.clone();
    for obs in observers.iter_mut() {
        obs.observe(0, &state);
    }
    let (steps, last) = step_plan(t_end, dt);
    let start = initial.time;
    let mut stepper = MeanFieldStepper::new(state.n_max());
    for k in 1..=steps {
        let h = if k == steps { last } else { dt };
        stepper.step(&mut state, h)?;
        state.time = if k == steps { start + t_end } else { start + T::from_usize_lossy(k) * dt };
        for obs in observers.iter_mut() {
            let cadence = obs.cadence().max(1);
            if k % cadence == 0 || k == steps {
                obs.observe(k, &state);
            }
        }
    }
    Ok(Trajectory { final_state: state, steps })
}

/// Tracks the worst deviation of the conserved quantities along a run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct InvariantMonitor {
    pub target_mean: f64,
    pub max_mass_error: f64,
    pub max_mean_error: f64,
    pub min_component: f64,
    pub observations: usize,
}

impl InvariantMonitor {
    pub fn new(target_mean: f64) -> Self {
        Self { target_mean, min_component: f64::INFINITY, ..Default::default() }
    }
}

impl<T: Real> Observer<T> for InvariantMonitor {
    fn observe(&mut self, _step: usize, state: &MeanFieldState<T>) {
        let mass_c = (state.pc.mass().as_f64() - 1.0).abs();
        let mass_h = (state.ph.mass().as_f64() - 1.0).abs();
        self.max_mass_error = self.max_mass_error.max(mass_c.max(mass_h));
        let mean = state.weighted_mean().as_f64();
        self.max_mean_error = self.max_mean_error.max((mean - self.target_mean).abs());
        let min = state
            .pc
            .probs()
            .iter()
            .chain(state.ph.probs())
            .fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
        self.min_component = self.min_component.min(min);
        self.observations += 1;
    }
}

/// Stores full snapshots every `every` steps.
#[derive(Debug, Clone)]
pub struct SnapshotRecorder<T> {
    pub every: usize,
    pub snapshots: Vec<MeanFieldState<T>>,
}

impl<T: Real> SnapshotRecorder<T> {
    pub fn new(every: usize) -> Self {
        Self { every: every.max(1), snapshots: Vec::new() }
    }
}

impl<T: Real> Observer<T> for SnapshotRecorder<T> {
    fn cadence(&self) -> usize {
        self.every
    }

    fn observe(&mut self, _step: usize, state: &MeanFieldState<T>) {
        self.snapshots.push(state.clone());
    }
}

/// L1 distance of each law to the equilibrium, sampled along the run.
#[derive(Debug, Clone, Default)]
pub struct DistanceTrace {
    pub every: usize,
    pub target_c: Vec<f64>,
    pub target_h: Vec<f64>,
    /// `(time, |p^c - pbar^c|_1, |p^h - pbar^h|_1)`.
    pub rows: Vec<(f64, f64, f64)>,
}

impl DistanceTrace {
    pub fn new<T: Real>(eq: &EquilibriumPair<T>, every: usize) -> Self {
        let f = |p: &WealthPmf<T>| p.probs().iter().map(|v| v.as_f64()).collect();
        Self { every: every.max(1), target_c: f(eq.cheater_or_honest()), target_h: f(&eq.p_bar_h), rows: Vec::new() }
    }
}

impl<T: Real> Observer<T> for DistanceTrace {
    fn cadence(&self) -> usize {
        self.every
    }

    fn observe(&mut self, _step: usize, state: &MeanFieldState<T>) {
        let l1 = |p: &WealthPmf<T>, q: &[f64]| {
            let n = p.len().max(q.len());
            (0..n).map(|i| (p.get(i).as_f64() - q.get(i).copied().unwrap_or(0.0)).abs()).sum::<f64>()
        };
        self.rows.push((state.time.as_f64(), l1(&state.pc, &self.target_c), l1(&state.ph, &self.target_h)));
    }
}

/// Sum of a signed sequence, compensated.
pub fn total<T: Real>(v: &[T]) -> T {
    sum_compensated(v.iter().copied())
}

/// First moment of a signed sequence.
pub fn first_moment<T: Real>(v: &[T]) -> T {
    sum_compensated(v.iter().enumerate().map(|(n, &x)| T::from_usize_lossy(n) * x))
}
