//! Reproducible experiments for the probabilistic-cheater exchange game.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numeric
//! failure, 4 invariant violation (including failed acceptance checks).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Format};

#[derive(Debug, Parser)]
#[command(name = "bdy-cheat", version, about = "Money-exchange game with probabilistic cheaters")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed for the ABM and for sampled perturbations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format for the output files.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct ModelArgs {
    /// Mean wealth per agent.
    #[arg(long)]
    mu: Option<f64>,
    /// Honest fraction of the population.
    #[arg(long = "n-h")]
    n_h: Option<f64>,
    /// Cheating probability.
    #[arg(long)]
    gamma: Option<f64>,
    /// Population size for the ABM.
    #[arg(long = "n-agents")]
    n_agents: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form equilibrium pair, means and Gini index.
    Equilibrium {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "n-max")]
        n_max: Option<usize>,
    },
    /// Agent-based simulation with snapshots and a comparison table.
    Abm {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        /// Comma-separated snapshot times (empty for none).
        #[arg(long = "record-times", value_delimiter = ',', num_args = 0..)]
        record_times: Option<Vec<f64>>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Mean-field RK4 integration with an H trace.
    Ode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "n-max")]
        n_max: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        #[arg(long = "snapshot-every")]
        snapshot_every: Option<usize>,
        #[arg(long = "h-every")]
        h_every: Option<usize>,
    },
    /// Equilibrium Gini index along gamma grids.
    GiniSweep {
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        #[arg(long = "n-h", value_delimiter = ',')]
        n_h: Option<Vec<f64>>,
        /// Explicit comma-separated gamma grid.
        #[arg(long = "gamma-grid", value_delimiter = ',', num_args = 0..)]
        gamma_grid: Option<Vec<f64>>,
        #[arg(long = "gamma-points")]
        gamma_points: Option<usize>,
    },
    /// Energy traces of the linearized flow for random admissible perturbations.
    Linearized {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "n-max")]
        n_max: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        support: Option<usize>,
        /// Trace the zero perturbation.
        #[arg(long)]
        zero: bool,
    },
    /// Runs every acceptance check and prints a pass/fail table.
    Verify,
}

fn apply_model(cfg: &mut ExperimentConfig, m: &ModelArgs) {
    let b = &mut cfg.model;
    b.mu = m.mu.unwrap_or(b.mu);
    b.n_h = m.n_h.unwrap_or(b.n_h);
    b.gamma = m.gamma.unwrap_or(b.gamma);
    b.n_agents = m.n_agents.unwrap_or(b.n_agents);
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, commands::CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(commands::CliError::Config)?,
        None => ExperimentConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.out, cli.out.clone());
    set(&mut cfg.format, cli.format);
    match &cli.command {
        Command::Equilibrium { model, n_max } => {
            apply_model(&mut cfg, model);
            if n_max.is_some() {
                cfg.equilibrium.n_max = *n_max;
            }
        }
        Command::Abm { model, t_end, record_times, replicas } => {
            apply_model(&mut cfg, model);
            set(&mut cfg.abm.t_end, *t_end);
            if record_times.is_some() {
                cfg.abm.record_times = record_times.clone();
            }
            set(&mut cfg.abm.replicas, *replicas);
        }
        Command::Ode { model, n_max, dt, t_end, snapshot_every, h_every } => {
            apply_model(&mut cfg, model);
            set(&mut cfg.ode.n_max, *n_max);
            set(&mut cfg.ode.dt, *dt);
            set(&mut cfg.ode.t_end, *t_end);
            set(&mut cfg.ode.snapshot_every, *snapshot_every);
            set(&mut cfg.ode.h_every, *h_every);
        }
        Command::GiniSweep { mu, n_h, gamma_grid, gamma_points } => {
            set(&mut cfg.sweep.mu, mu.clone());
            set(&mut cfg.sweep.n_h, n_h.clone());
            if gamma_grid.is_some() {
                cfg.sweep.gamma_grid = gamma_grid.clone();
            }
            set(&mut cfg.sweep.gamma_points, *gamma_points);
        }
        Command::Linearized { model, n_max, dt, t_end, samples, support, zero } => {
            apply_model(&mut cfg, model);
            set(&mut cfg.linearized.n_max, *n_max);
            set(&mut cfg.linearized.dt, *dt);
            set(&mut cfg.linearized.t_end, *t_end);
            set(&mut cfg.linearized.samples, *samples);
            set(&mut cfg.linearized.support, *support);
            cfg.linearized.zero |= *zero;
        }
        Command::Verify => {}
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = build_config(&cli).and_then(|cfg| match cli.command {
        Command::Equilibrium { .. } => commands::equilibrium(&cfg),
        Command::Abm { .. } => commands::abm(&cfg),
        Command::Ode { .. } => commands::ode(&cfg),
        Command::GiniSweep { .. } => commands::gini_sweep(&cfg),
        Command::Linearized { .. } => commands::linearized(&cfg),
        Command::Verify => commands::verify(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.code())
        }
    }
}
