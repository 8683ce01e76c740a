//! Acceptance checks shared by the `verify` command and the acceptance tests.
//!
//! Each check runs at its pinned tolerance and returns a [`CriterionReport`];
//! none of them panics on failure.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::abm::{run, run_replicas, Group, PopulationState, SimConfig};
use crate::analysis::{distance, distance_slices, gini_equilibrium, gini_pmf, gini_sweep, uniform_gamma_grid, Metric};
use crate::equilibrium::{equilibrium_ratio, quadratic_residual, solve_equilibrium, EquilibriumPair};
use crate::error::Result;
use crate::lyapunov::{
    energy_dissipation_rate, energy_rate_finite_difference, h_functional, h_max_check, h_production,
    linearized_rhs, poincare_property, sample_perturbation, HTrace, MaxCheckOptions,
};
use crate::meanfield::{
    apply_lc, apply_lh, integrate, total, vector_field, DistanceTrace, InvariantMonitor, MeanFieldState,
    MeanFieldStepper, Observer, DEFAULT_DT, DEFAULT_N_MAX,
};
use crate::params::ModelParams;
use crate::pmf::{geometric_pmf, WealthPmf};

/// Outcome of one acceptance check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionReport {
    fn new(id: &'static str, name: &'static str, passed: bool, detail: String) -> Self {
        Self { id, name, passed, detail }
    }

    fn from_result(id: &'static str, name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(id, name, passed, detail),
            Err(e) => Self::new(id, name, false, format!("error: {e}")),
        }
    }

    /// `PASS 1 equilibrium ...` style line.
    pub fn line(&self) -> String {
        format!("{} {:<3} {:<28} {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 1 }
    }
}

fn reference_params() -> ModelParams<f64> {
    ModelParams::default()
}

/// Root of `n_h r/(1-r) + n_c r/(1-gamma-r) = mu` on `(0, 1-gamma)` by
/// bisection; independent of the quadratic.
pub fn mean_equation_root(params: &ModelParams<f64>) -> f64 {
    let k = params.give_prob();
    let hi_bound = if params.n_c() > 0.0 { k } else { 1.0 };
    let excess = |r: f64| {
        let mut m = params.n_h() * r / (1.0 - r);
        if params.n_c() > 0.0 {
            m += params.n_c() * r / (k - r);
        }
        m - params.mu()
    };
    let (mut lo, mut hi) = (0.0, hi_bound);
    while hi - lo > 0.0 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Equilibrium quadratic, bracket, oracle and mean checks at the reference economy.
pub fn criterion_equilibrium() -> CriterionReport {
    let p = reference_params();
    let r = equilibrium_ratio(&p);
    let residual = quadratic_residual(&p, r).abs();
    let oracle = mean_equation_root(&p);
    let k = p.give_prob();
    let combined = p.n_h() * r / (1.0 - r) + p.n_c() * r / (k - r);
    let in_bracket = r > 0.0 && r < k;
    let passed = residual < 1e-12 && in_bracket && (r - oracle).abs() < 1e-12 && (combined - p.mu()).abs() < 1e-6;
    CriterionReport::new(
        "1",
        "equilibrium",
        passed,
        format!(
            "r_bar={r:.16} residual={residual:.1e} oracle_gap={:.1e} mean_gap={:.1e}",
            (r - oracle).abs(),
            (combined - p.mu()).abs()
        ),
    )
}

/// Keeps the states at a set of step indices.
struct StepCapture {
    steps: Vec<usize>,
    next: usize,
    states: Vec<MeanFieldState<f64>>,
}

impl Observer<f64> for StepCapture {
    fn observe(&mut self, step: usize, state: &MeanFieldState<f64>) {
        while self.next < self.steps.len() && self.steps[self.next] < step {
            self.next += 1;
        }
        if self.next < self.steps.len() && self.steps[self.next] == step {
            self.states.push(state.clone());
            self.next += 1;
        }
    }
}

fn reference_ode_setup() -> Result<(ModelParams<f64>, EquilibriumPair<f64>, MeanFieldState<f64>)> {
    let p = reference_params();
    let eq = solve_equilibrium(&p, DEFAULT_N_MAX)?;
    let init = MeanFieldState::dirac_at_mean(p, DEFAULT_N_MAX)?;
    Ok((p, eq, init))
}

/// RK4 from Dirac data to `t = 500`: distance to equilibrium and invariants.
pub fn criterion_ode_convergence() -> CriterionReport {
    CriterionReport::from_result("2", "ode convergence", (|| {
        let (p, eq, init) = reference_ode_setup()?;
        let start = Instant::now();
        let mut monitor = InvariantMonitor::new(p.mu());
        let mut dist = DistanceTrace::new(&eq, 5000);
        let traj = integrate(&init, 500.0, DEFAULT_DT, &mut [&mut monitor, &mut dist])?;
        let elapsed = start.elapsed().as_secs_f64();
        let l1_c = distance(&traj.final_state.pc, eq.cheater_or_honest(), Metric::L1);
        let l1_h = distance(&traj.final_state.ph, &eq.p_bar_h, Metric::L1);
        let passed = l1_c < 1e-3 && l1_h < 1e-3 && monitor.max_mass_error <= 1e-9 && monitor.max_mean_error <= 1e-6;
        Ok((
            passed,
            format!(
                "L1_c={l1_c:.2e} L1_h={l1_h:.2e} mass_err={:.1e} mean_err={:.1e} min={:.1e} wall={elapsed:.1}s",
                monitor.max_mass_error, monitor.max_mean_error, monitor.min_component
            ),
        ))
    })())
}

/// Monotone H, production vs centered difference, production at equilibrium.
pub fn criterion_entropy() -> CriterionReport {
    CriterionReport::from_result("3", "entropy monotonicity", (|| {
        let (p, eq, init) = reference_ode_setup()?;
        let dt = DEFAULT_DT;
        let mut trace = HTrace::new(&eq, &p, 1);
        // 100 log-spaced sample times in [1, 500], each with its two neighbours.
        let centers: Vec<usize> = (0..100)
            .map(|k| {
                let t = (500f64.ln() * k as f64 / 99.0).exp();
                ((t / dt).round() as usize).clamp(1, 49_999)
            })
            .collect();
        let mut steps: Vec<usize> = centers.iter().flat_map(|&c| [c - 1, c, c + 1]).collect();
        steps.sort_unstable();
        steps.dedup();
        let mut capture = StepCapture { steps: steps.clone(), next: 0, states: Vec::new() };
        integrate(&init, 500.0, dt, &mut [&mut trace, &mut capture])?;

        let worst_drop = trace.rows.windows(2).map(|w| w[1].h - w[0].h).fold(f64::INFINITY, f64::min);
        let at = |s: usize| &capture.states[steps.binary_search(&s).expect("captured")];
        let mut worst_fd = 0.0f64;
        let mut fd_ok = true;
        for &c in &centers {
            let (lo, mid, hi) = (at(c - 1), at(c), at(c + 1));
            let fd = (h_functional(&hi.pc, &hi.ph, &p) - h_functional(&lo.pc, &lo.ph, &p)) / (2.0 * dt);
            let prod = h_production(mid);
            let tol = (1e-3 * prod.abs()).max(1e-6);
            worst_fd = worst_fd.max((fd - prod).abs() / tol);
            fd_ok &= (fd - prod).abs() <= tol;
        }
        let at_eq = h_production(&MeanFieldState::from_equilibrium(&eq, p)).abs();
        let passed = worst_drop >= -1e-10 && fd_ok && at_eq < 1e-12;
        Ok((
            passed,
            format!(
                "min_step_dH={worst_drop:.1e} worst_fd/tol={worst_fd:.2} production_at_eq={at_eq:.1e} H_final_gap={:.1e}",
                trace.rows.last().map(|r| r.gap).unwrap_or(f64::NAN)
            ),
        ))
    })())
}

/// Single long ABM run against the equilibrium laws.
pub fn criterion_abm_stationarity(opts: VerifyOptions) -> CriterionReport {
    CriterionReport::from_result("4", "abm stationarity", (|| {
        let p = reference_params();
        let eq = solve_equilibrium(&p, DEFAULT_N_MAX)?;
        let init = PopulationState::uniform(&p)?;
        let t_end = 20_000.0;
        let cfg = SimConfig { average_from: Some(t_end / 2.0), ..SimConfig::new(opts.seed, t_end, vec![t_end]) };
        let start = Instant::now();
        let res = run(&p, &cfg, &init)?;
        let elapsed = start.elapsed().as_secs_f64();
        let conserved = res.final_state.wealth().iter().sum::<u64>() == init.total_money();
        let targets = [
            (Group::All, &eq.p_bar_mix),
            (Group::Honest, &eq.p_bar_h),
            (Group::Cheater, eq.cheater_or_honest()),
        ];
        let snap = &res.snapshots[0];
        let avg = res.time_average.as_ref().expect("requested");
        let mut passed = conserved;
        let mut parts = Vec::new();
        for (g, target) in targets {
            let tv = distance(snap.group(g).expect("both groups present"), target, Metric::Tv);
            let tv_avg = distance(avg.group(g).expect("both groups present"), target, Metric::Tv);
            passed &= tv < 0.05;
            parts.push(format!("TV_{}={tv:.4} (time-avg {tv_avg:.4})", g.label()));
        }
        Ok((
            passed,
            format!("{} conserved={conserved} events={} wall={elapsed:.1}s", parts.join(" "), res.event_count),
        ))
    })())
}

/// Pure-honest anchor, closed form vs truncated PMF, and monotone sweeps.
pub fn criterion_gini(opts: VerifyOptions) -> CriterionReport {
    CriterionReport::from_result("5", "gini", (|| {
        let honest = ModelParams::<f64>::mean_field(5.0, 1.0, 0.5)?;
        let anchor = (gini_equilibrium(&honest)? - 6.0 / 11.0).abs();

        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5151);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let p = ModelParams::<f64>::mean_field(
                rng.random_range(0.5..10.0),
                rng.random_range(0.2..0.8),
                rng.random_range(0.0..0.95),
            )?;
            let eq = solve_equilibrium(&p, 2000)?;
            worst = worst.max((gini_equilibrium(&p)? - gini_pmf(&eq.p_bar_mix)?).abs());
        }

        let grid = uniform_gamma_grid(100);
        let mut decreases = 0;
        for mu in [5.0, 10.0] {
            for n_h in [0.2, 0.4, 0.6, 0.8] {
                decreases += gini_sweep(mu, n_h, &grid)?.adjacent_decreases;
            }
        }
        let passed = anchor < 1e-10 && worst < 1e-4 && decreases == 0;
        Ok((passed, format!("anchor_err={anchor:.1e} closed_vs_pmf={worst:.1e} adjacent_decreases={decreases}")))
    })())
}

fn random_probs<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// (a) zero-sum of both operators on random inputs.
pub fn property_zero_sum(opts: VerifyOptions) -> CriterionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6a);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(2..=500);
        let p = random_probs(&mut rng, len);
        let r = rng.random::<f64>();
        let gamma = rng.random_range(0.0..0.99);
        worst = worst.max(total(&apply_lh(&p, r)).abs()).max(total(&apply_lc(&p, r, gamma)).abs());
    }
    CriterionReport::new("6a", "operator zero-sum", worst <= 1e-14, format!("max|sum|={worst:.1e}"))
}

/// (b) geometric fixed points are annihilated.
pub fn property_fixed_points(opts: VerifyOptions) -> CriterionReport {
    let mut worst = 0.0f64;
    let eq = solve_equilibrium(&reference_params(), DEFAULT_N_MAX).expect("reference equilibrium");
    let maxabs = |v: Vec<f64>| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    worst = worst.max(maxabs(apply_lh(eq.p_bar_h.probs(), eq.r_bar)));
    worst = worst.max(maxabs(apply_lc(eq.cheater_or_honest().probs(), eq.r_bar, 0.5)));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6b);
    for _ in 0..200 {
        let r = rng.random_range(0.01..0.95);
        let gamma = rng.random_range(0.0..(1.0 - r - 0.01));
        let g = geometric_pmf(r, 300).expect("ratio in range").pmf;
        worst = worst.max(maxabs(apply_lh(g.probs(), r)));
        let q = geometric_pmf(r / (1.0 - gamma), 300).expect("ratio in range").pmf;
        worst = worst.max(maxabs(apply_lc(q.probs(), r, gamma)));
    }
    CriterionReport::new("6b", "geometric fixed points", worst < 1e-12, format!("max|L p|={worst:.1e}"))
}

/// (c) weighted Poincare inequality on random admissible sequences.
pub fn property_poincare(opts: VerifyOptions) -> CriterionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6c);
    let rep = poincare_property(100_000, &mut rng);
    let tight = (rep.extremal_ratio - 1.0).abs() < 1e-6 && (rep.lambda_numeric - rep.lambda_closed_form).abs() < 1e-6;
    CriterionReport::new(
        "6c",
        "poincare inequality",
        rep.violations == 0 && tight,
        format!(
            "violations={} min_rhs/lhs={:.6} lambda={:.6} (closed {:.6}) extremal_rhs/lhs={:.9}",
            rep.violations, rep.min_ratio, rep.lambda_numeric, rep.lambda_closed_form, rep.extremal_ratio
        ),
    )
}

/// (d) energy dissipation sign and identity vs finite differences.
pub fn property_dissipation(opts: VerifyOptions) -> CriterionReport {
    CriterionReport::from_result("6d", "energy dissipation", (|| {
        let p = reference_params();
        let eq = solve_equilibrium(&p, 300)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6d);
        let mut max_rate = f64::NEG_INFINITY;
        let mut worst_rel = 0.0f64;
        for k in 0..10_000 {
            let support = rng.random_range(2..=60);
            let w = sample_perturbation(&eq, &p, support, &mut rng);
            let rate = energy_dissipation_rate(&w, &eq, &p);
            max_rate = max_rate.max(rate);
            if k < 100 {
                let fd = energy_rate_finite_difference(&w, &eq, &p, 1e-4)?;
                worst_rel = worst_rel.max((rate - fd).abs() / rate.abs());
            }
        }
        Ok((max_rate <= 0.0 && worst_rel < 1e-6, format!("max_rate={max_rate:.2e} worst_rel_fd={worst_rel:.1e}")))
    })())
}

/// (e) no sampled pair beats the equilibrium H.
pub fn property_maximality(opts: VerifyOptions) -> CriterionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6e);
    let r = h_max_check(&reference_params(), 10_000, &mut rng, MaxCheckOptions::default())
        .map(|rep| (true, format!("max_gap={:.3e} worst={:?}", rep.max_gap, rep.worst_kind)));
    CriterionReport::from_result("6e", "H maximality", r)
}

fn one_step(state: &MeanFieldState<f64>, dt: f64, substeps: usize) -> Result<MeanFieldState<f64>> {
    let mut s = state.clone();
    let mut stepper = MeanFieldStepper::new(s.n_max());
    for _ in 0..substeps {
        stepper.step(&mut s, dt / substeps as f64)?;
    }
    Ok(s)
}

/// (f) local error ratio of RK4 under step halving.
pub fn property_rk4_order() -> CriterionReport {
    CriterionReport::from_result("6f", "rk4 order", (|| {
        let p = reference_params();
        let ph = geometric_pmf(0.3, 200)?.pmf.normalized()?;
        let pc = geometric_pmf(0.8, 200)?.pmf.normalized()?;
        let state = MeanFieldState::new(pc, ph, p)?;
        let err = |dt: f64| -> Result<f64> {
            let coarse = one_step(&state, dt, 1)?;
            let fine = one_step(&state, dt, 100)?;
            Ok(distance(&coarse.pc, &fine.pc, Metric::L1) + distance(&coarse.ph, &fine.ph, Metric::L1))
        };
        let (e1, e2) = (err(0.1)?, err(0.05)?);
        let ratio = e1 / e2;
        Ok(((24.0..=40.0).contains(&ratio), format!("err(0.1)={e1:.2e} err(0.05)={e2:.2e} ratio={ratio:.2}")))
    })())
}

/// (g) the nonlinear field minus its linearization is quadratic in epsilon.
pub fn property_linearization_defect(opts: VerifyOptions) -> CriterionReport {
    CriterionReport::from_result("6g", "linearization defect", (|| {
        let p = reference_params();
        let eq = solve_equilibrium(&p, 300)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6f);
        let w = sample_perturbation(&eq, &p, 30, &mut rng);
        let lin = linearized_rhs(&w, &eq, &p);
        let base: Vec<f64> = eq.cheater_or_honest().probs().iter().chain(eq.p_bar_h.probs()).copied().collect();
        let dir: Vec<f64> = w.wc.iter().chain(&w.wh).copied().collect();
        let lin_v: Vec<f64> = lin.wc.iter().chain(&lin.wh).copied().collect();
        let defect = |eps: f64| {
            let y: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + eps * d).collect();
            let mut f = vec![0.0; y.len()];
            vector_field(&p, &y, &mut f);
            let mut f0 = vec![0.0; y.len()];
            vector_field(&p, &base, &mut f0);
            let d: Vec<f64> = f.iter().zip(&f0).zip(&lin_v).map(|((a, b), l)| a - b - eps * l).collect();
            distance_slices(&d, &[], Metric::L1)
        };
        let ratio = defect(1e-3) / defect(5e-4);
        Ok(((3.0..=5.0).contains(&ratio), format!("defect ratio={ratio:.4}")))
    })())
}

/// ABM ensemble mean against the ODE solution at `t = 20`.
pub fn criterion_cross_validation(opts: VerifyOptions) -> CriterionReport {
    CriterionReport::from_result("7", "abm vs ode", (|| {
        let p = reference_params();
        let t = 20.0;
        let init = PopulationState::uniform(&p)?;
        let cfg = SimConfig::new(opts.seed.wrapping_mul(1000), t, vec![t]);
        let reps = run_replicas(&p, &cfg, &init, 100)?;
        let mut avg = vec![0.0; 1];
        for r in &reps {
            let pm = r.snapshots[0].all.probs();
            if pm.len() > avg.len() {
                avg.resize(pm.len(), 0.0);
            }
            for (a, v) in avg.iter_mut().zip(pm) {
                *a += v / reps.len() as f64;
            }
        }
        let ode = integrate(&MeanFieldState::dirac_at_mean(p, DEFAULT_N_MAX)?, t, DEFAULT_DT, &mut [])?;
        let tv = distance_slices(&avg, ode.final_state.mixture().probs(), Metric::Tv);
        let ens = WealthPmf::from_raw(avg);
        Ok((tv < 0.02, format!("TV={tv:.4} ensemble_mean={:.6}", ens.mean())))
    })())
}

/// Every check, in order.
pub fn run_all(opts: VerifyOptions) -> Vec<CriterionReport> {
    vec![
        criterion_equilibrium(),
        criterion_ode_convergence(),
        criterion_entropy(),
        criterion_abm_stationarity(opts),
        criterion_gini(opts),
        property_zero_sum(opts),
        property_fixed_points(opts),
        property_poincare(opts),
        property_dissipation(opts),
        property_maximality(opts),
        property_rk4_order(),
        property_linearization_defect(opts),
        criterion_cross_validation(opts),
    ]
}
