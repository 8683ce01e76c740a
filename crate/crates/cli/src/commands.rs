use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bdy_cheat::abm::{run_replicas, Group, PopulationState, SimConfig, SimResult};
use bdy_cheat::analysis::{distance, gini_equilibrium, gini_sweep as sweep, Metric};
use bdy_cheat::equilibrium::{quadratic_roots, solve_equilibrium_with_tol, suggested_n_max};
use bdy_cheat::io::{self, RunMetadata};
use bdy_cheat::lyapunov::{
    decay_rate_estimate, energy_dissipation_rate, energy_rate_finite_difference, integrate_linearized,
    sample_perturbation, HTrace, PerturbationPair,
};
use bdy_cheat::meanfield::{integrate, InvariantMonitor, MeanFieldState, SnapshotRecorder};
use bdy_cheat::verify::{run_all, VerifyOptions};
use bdy_cheat::{Error, ModelParams64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, Format};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Io(anyhow::Error),
    Config(anyhow::Error),
    Numeric(anyhow::Error),
    Invariant(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, e) = match self {
            CliError::Io(e) => ("i/o", e),
            CliError::Config(e) => ("config", e),
            CliError::Numeric(e) => ("numeric", e),
            CliError::Invariant(e) => ("invariant", e),
        };
        write!(f, "{kind}: {e:#}")
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams { .. } | Error::LengthMismatch { .. } => CliError::Config(e.into()),
            Error::ConservationViolated { .. }
            | Error::MaximalityViolated { .. }
            | Error::InequalityViolated { .. } => CliError::Invariant(e.into()),
            _ => CliError::Numeric(e.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

type CmdResult = Result<(), CliError>;

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(anyhow::anyhow!(msg.into()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<V: Serialize + ?Sized>(dir: &Path, name: &str, value: &V) -> CmdResult {
    io::write_json(create(dir, name)?, value)?;
    Ok(())
}

/// Writes `stem.csv` through `csv_fn` or `stem.json` from `json_value`.
fn emit<V: Serialize + ?Sized>(
    cfg: &ExperimentConfig,
    dir: &Path,
    stem: &str,
    json_value: &V,
    csv_fn: impl FnOnce(BufWriter<File>) -> io::CsvResult,
) -> CmdResult {
    match cfg.format {
        Format::Csv => Ok(csv_fn(create(dir, &format!("{stem}.csv"))?)?),
        Format::Json => write_json(dir, &format!("{stem}.json"), json_value),
    }
}

/// Equilibrium used as a reference; a heavy truncated tail is reported, not fatal.
fn reference_equilibrium(p: &ModelParams64, n_max: usize) -> Result<bdy_cheat::EquilibriumPair64, CliError> {
    match solve_equilibrium_with_tol(p, n_max, 1e-6) {
        Err(Error::TailTooHeavy { tail, .. }) => {
            log::warn!("equilibrium tail mass {tail:e} beyond n_max = {n_max}; comparing against the renormalized truncation");
            Ok(solve_equilibrium_with_tol(p, n_max, 1.0)?)
        }
        r => Ok(r?),
    }
}

fn params(cfg: &ExperimentConfig) -> Result<ModelParams64, CliError> {
    Ok(cfg.model.params()?)
}

#[derive(Serialize)]
struct EquilibriumSummary {
    params: ModelParams64,
    r_bar: f64,
    other_root: f64,
    honest_ratio: f64,
    cheater_ratio: Option<f64>,
    mean_honest: f64,
    mean_cheater: Option<f64>,
    gini: f64,
    n_max: usize,
}

pub fn equilibrium(cfg: &ExperimentConfig) -> CmdResult {
    let p = params(cfg)?;
    let tol = cfg.equilibrium.tail_tol;
    let n_max = cfg.equilibrium.n_max.unwrap_or_else(|| suggested_n_max(&p, tol).max(500));
    let eq = solve_equilibrium_with_tol(&p, n_max, tol)?;
    let has_c = eq.p_bar_c.is_some();
    let summary = EquilibriumSummary {
        params: p,
        r_bar: eq.r_bar,
        other_root: quadratic_roots(&p).1,
        honest_ratio: eq.honest_ratio(),
        cheater_ratio: has_c.then(|| eq.cheater_ratio(&p)),
        mean_honest: eq.mean_honest(),
        mean_cheater: has_c.then(|| eq.mean_cheater(&p)),
        gini: gini_equilibrium(&p)?,
        n_max,
    };
    println!("r_bar = {:.15}  gini = {:.10}", summary.r_bar, summary.gini);
    let dir = &cfg.out;
    write_json(dir, "summary.json", &summary)?;
    let mut laws = vec![("h", &eq.p_bar_h), ("mix", &eq.p_bar_mix)];
    if let Some(c) = &eq.p_bar_c {
        laws.insert(0, ("c", c));
    }
    #[derive(Serialize)]
    struct Laws<'a> {
        p_bar_c: Option<&'a [f64]>,
        p_bar_h: &'a [f64],
        p_bar_mix: &'a [f64],
    }
    let json = Laws {
        p_bar_c: eq.p_bar_c.as_ref().map(|p| p.probs()),
        p_bar_h: eq.p_bar_h.probs(),
        p_bar_mix: eq.p_bar_mix.probs(),
    };
    emit(cfg, dir, "pmfs", &json, |w| io::write_pmfs_csv(w, &laws))
}

#[derive(Serialize)]
struct ComparisonRow {
    time: f64,
    group: &'static str,
    tv: f64,
}

fn comparison(res: &SimResult, eq: &bdy_cheat::EquilibriumPair64) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for s in &res.snapshots {
        for (g, target) in [(Group::All, Some(&eq.p_bar_mix)), (Group::Honest, Some(&eq.p_bar_h)), (Group::Cheater, eq.p_bar_c.as_ref())]
        {
            if let (Some(emp), Some(t)) = (s.group(g), target) {
                rows.push(ComparisonRow { time: s.time, group: g.label(), tv: distance(emp, t, Metric::Tv) });
            }
        }
    }
    rows
}

pub fn abm(cfg: &ExperimentConfig) -> CmdResult {
    let p = params(cfg)?;
    let b = &cfg.abm;
    if b.replicas == 0 {
        return Err(config_error("abm.replicas must be at least 1"));
    }
    let record = b.record_times.clone().unwrap_or_else(|| vec![b.t_end]);
    let sim = SimConfig::new(cfg.seed, b.t_end, record);
    sim.validate()?;
    let init = PopulationState::uniform(&p)?;
    let eq = reference_equilibrium(&p, b.n_max)?;
    let results = run_replicas(&p, &sim, &init, b.replicas)?;
    for (k, res) in results.iter().enumerate() {
        let dir: PathBuf = if b.replicas == 1 { cfg.out.clone() } else { cfg.out.join(format!("replica_{k}")) };
        let meta = RunMetadata { params: p, seed: cfg.seed.wrapping_add(k as u64), event_count: res.event_count };
        write_json(&dir, "metadata.json", &meta)?;
        if res.snapshots.is_empty() {
            continue;
        }
        emit(cfg, &dir, "snapshots", &res.snapshots, |w| io::write_snapshots_csv(w, &res.snapshots))?;
        let rows = comparison(res, &eq);
        for r in rows.iter().filter(|r| Some(r.time) == res.snapshots.last().map(|s| s.time)) {
            println!("replica {k} t={} TV[{}] = {:.4}", r.time, r.group, r.tv);
        }
        emit(cfg, &dir, "comparison", &rows, |w| io::write_rows(w, &rows))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OdeSummary {
    params: ModelParams64,
    steps: usize,
    t_end: f64,
    l1_cheater: Option<f64>,
    l1_honest: f64,
    h_final: f64,
    h_equilibrium: f64,
    invariants: InvariantMonitor,
}

pub fn ode(cfg: &ExperimentConfig) -> CmdResult {
    let p = params(cfg)?;
    let o = &cfg.ode;
    let eq = reference_equilibrium(&p, o.n_max)?;
    let init = MeanFieldState::dirac_at_mean(p, o.n_max)?;
    let mut monitor = InvariantMonitor::new(p.mu());
    let mut trace = HTrace::new(&eq, &p, o.h_every);
    let mut snaps = SnapshotRecorder::new(o.snapshot_every);
    let traj = integrate(&init, o.t_end, o.dt, &mut [&mut monitor, &mut trace, &mut snaps])?;
    let fin = &traj.final_state;
    let summary = OdeSummary {
        params: p,
        steps: traj.steps,
        t_end: o.t_end,
        l1_cheater: eq.p_bar_c.as_ref().map(|c| distance(&fin.pc, c, Metric::L1)),
        l1_honest: distance(&fin.ph, &eq.p_bar_h, Metric::L1),
        h_final: trace.rows.last().map(|r| r.h).unwrap_or(f64::NAN),
        h_equilibrium: trace.h_equilibrium,
        invariants: monitor,
    };
    println!(
        "t = {}  L1_c = {:?}  L1_h = {:.3e}  H_eq - H = {:.3e}",
        o.t_end,
        summary.l1_cheater,
        summary.l1_honest,
        summary.h_equilibrium - summary.h_final
    );
    let dir = &cfg.out;
    write_json(dir, "summary.json", &summary)?;
    #[derive(Serialize)]
    struct Snap<'a> {
        time: f64,
        c: &'a [f64],
        h: &'a [f64],
    }
    let json: Vec<Snap> =
        snaps.snapshots.iter().map(|s| Snap { time: s.time, c: s.pc.probs(), h: s.ph.probs() }).collect();
    emit(cfg, dir, "trajectory", &json, |w| io::write_trajectory_csv(w, &snaps.snapshots))?;
    emit(cfg, dir, "h_trace", &trace.rows, |w| io::write_h_trace_csv(w, &trace.rows))
}

#[derive(Serialize)]
struct Monotonicity {
    mu: f64,
    n_h: f64,
    points: usize,
    adjacent_decreases: usize,
    min_denominator_margin: f64,
}

pub fn gini_sweep(cfg: &ExperimentConfig) -> CmdResult {
    let s = &cfg.sweep;
    let grid = s.grid();
    if grid.is_empty() || s.mu.is_empty() || s.n_h.is_empty() {
        return Err(config_error("sweep grids must not be empty"));
    }
    let mut results = Vec::new();
    for &mu in &s.mu {
        for &n_h in &s.n_h {
            results.push(sweep(mu, n_h, &grid)?);
        }
    }
    let report: Vec<Monotonicity> = results
        .iter()
        .map(|r| Monotonicity {
            mu: r.params_base.mu(),
            n_h: r.params_base.n_h(),
            points: r.points.len(),
            adjacent_decreases: r.adjacent_decreases,
            min_denominator_margin: r.points.iter().map(|p| p.denominator_margin).fold(f64::INFINITY, f64::min),
        })
        .collect();
    for m in &report {
        println!("mu={} n_h={} points={} adjacent_decreases={}", m.mu, m.n_h, m.points, m.adjacent_decreases);
    }
    let dir = &cfg.out;
    write_json(dir, "monotonicity.json", &report)?;
    emit(cfg, dir, "sweep", &results, |w| io::write_sweep_csv(w, &results))
}

#[derive(Serialize)]
struct IdentityRow {
    trace: usize,
    dissipation_rate: f64,
    finite_difference: f64,
    relative_residual: f64,
}

#[derive(Serialize)]
struct LinearizedSummary {
    params: ModelParams64,
    traces: usize,
    monotone: bool,
    max_relative_residual: f64,
    decay_rate_estimates: Vec<Option<f64>>,
}

pub fn linearized(cfg: &ExperimentConfig) -> CmdResult {
    let p = params(cfg)?;
    let l = &cfg.linearized;
    let eq = reference_equilibrium(&p, l.n_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = if l.zero { 1 } else { l.samples };
    let mut traces = Vec::with_capacity(samples);
    let mut identity = Vec::with_capacity(samples);
    for trace in 0..samples {
        let w = if l.zero { PerturbationPair::zeros(l.n_max) } else { sample_perturbation(&eq, &p, l.support, &mut rng) };
        let rate = energy_dissipation_rate(&w, &eq, &p);
        let fd = energy_rate_finite_difference(&w, &eq, &p, l.fd_step)?;
        let relative_residual = if rate == 0.0 && fd == 0.0 { 0.0 } else { (rate - fd).abs() / rate.abs().max(fd.abs()) };
        identity.push(IdentityRow { trace, dissipation_rate: rate, finite_difference: fd, relative_residual });
        let (_, rows) = integrate_linearized(&w, &eq, &p, l.t_end, l.dt, l.every)?;
        traces.push(rows);
    }
    let monotone = traces.iter().all(|rows| rows.windows(2).all(|w| w[1].energy <= w[0].energy + 1e-10));
    let summary = LinearizedSummary {
        params: p,
        traces: traces.len(),
        monotone,
        max_relative_residual: identity.iter().map(|r| r.relative_residual).fold(0.0, f64::max),
        decay_rate_estimates: traces.iter().map(|rows| decay_rate_estimate(rows)).collect(),
    };
    println!(
        "traces = {}  monotone = {}  max identity residual = {:.2e}",
        summary.traces, summary.monotone, summary.max_relative_residual
    );
    let dir = &cfg.out;
    write_json(dir, "summary.json", &summary)?;
    emit(cfg, dir, "energy", &traces, |w| io::write_energy_csv(w, &traces))?;
    emit(cfg, dir, "identity", &identity, |w| io::write_rows(w, &identity))
}

pub fn verify(cfg: &ExperimentConfig) -> CmdResult {
    let reports = run_all(VerifyOptions { seed: cfg.seed });
    for r in &reports {
        println!("{}", r.line());
    }
    emit(cfg, &cfg.out, "verify", &reports, |w| io::write_rows(w, &reports))?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(anyhow::anyhow!("failed checks: {}", failed.join(", "))))
    }
}
