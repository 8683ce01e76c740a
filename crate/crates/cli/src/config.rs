//! Experiment configuration: a JSON file whose values command-line flags override.

use std::path::{Path, PathBuf};

use anyhow::Context;
use bdy_cheat::params::DEFAULT_AGENTS;
use bdy_cheat::ModelParams64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Unvalidated model block; turned into [`ModelParams64`] once flags are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub mu: f64,
    pub n_h: f64,
    pub gamma: f64,
    pub n_agents: usize,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self { mu: 5.0, n_h: 0.5, gamma: 0.5, n_agents: DEFAULT_AGENTS }
    }
}

impl ModelBlock {
    pub fn params(&self) -> bdy_cheat::Result<ModelParams64> {
        ModelParams64::new(self.mu, self.n_h, self.gamma, self.n_agents)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumBlock {
    /// Truncation bound; chosen from the tail tolerance when absent.
    pub n_max: Option<usize>,
    pub tail_tol: f64,
}

impl Default for EquilibriumBlock {
    fn default() -> Self {
        Self { n_max: None, tail_tol: bdy_cheat::equilibrium::DEFAULT_TAIL_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbmBlock {
    pub t_end: f64,
    /// Snapshot times; `None` means a single snapshot at `t_end`.
    pub record_times: Option<Vec<f64>>,
    pub replicas: usize,
    /// Truncation of the equilibrium laws used in the comparison table.
    pub n_max: usize,
}

impl Default for AbmBlock {
    fn default() -> Self {
        Self { t_end: 20_000.0, record_times: None, replicas: 1, n_max: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeBlock {
    pub n_max: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Steps between trajectory snapshots.
    pub snapshot_every: usize,
    /// Steps between H-trace rows.
    pub h_every: usize,
}

impl Default for OdeBlock {
    fn default() -> Self {
        Self { n_max: 500, dt: 0.01, t_end: 500.0, snapshot_every: 5000, h_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub mu: Vec<f64>,
    pub n_h: Vec<f64>,
    /// Explicit grid; overrides `gamma_points` when present.
    pub gamma_grid: Option<Vec<f64>>,
    pub gamma_points: usize,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self { mu: vec![5.0, 10.0], n_h: vec![0.2, 0.4, 0.6, 0.8], gamma_grid: None, gamma_points: 100 }
    }
}

impl SweepBlock {
    pub fn grid(&self) -> Vec<f64> {
        self.gamma_grid.clone().unwrap_or_else(|| bdy_cheat::analysis::uniform_gamma_grid(self.gamma_points))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizedBlock {
    pub n_max: usize,
    pub dt: f64,
    pub t_end: f64,
    pub every: usize,
    pub samples: usize,
    /// Highest index of the random perturbations.
    pub support: usize,
    /// Use the zero perturbation instead of random ones.
    pub zero: bool,
    pub fd_step: f64,
}

impl Default for LinearizedBlock {
    fn default() -> Self {
        Self { n_max: 300, dt: 0.01, t_end: 50.0, every: 10, samples: 5, support: 30, zero: false, fd_step: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub format: Format,
    pub model: ModelBlock,
    pub equilibrium: EquilibriumBlock,
    pub abm: AbmBlock,
    pub ode: OdeBlock,
    pub sweep: SweepBlock,
    pub linearized: LinearizedBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            format: Format::Csv,
            model: ModelBlock::default(),
            equilibrium: EquilibriumBlock::default(),
            abm: AbmBlock::default(),
            ode: OdeBlock::default(),
            sweep: SweepBlock::default(),
            linearized: LinearizedBlock::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
