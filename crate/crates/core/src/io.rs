//! Tidy CSV and JSON writers for experiment outputs.

use std::io::Write;

use serde::Serialize;

use crate::abm::{Group, Snapshot};
use crate::analysis::GiniSweepResult;
use crate::lyapunov::{EnergyRow, HRow};
use crate::meanfield::MeanFieldState;
use crate::params::ModelParams;
use crate::pmf::WealthPmf;
use crate::real::Real;

pub type CsvResult = std::result::Result<(), csv::Error>;

/// Run metadata stored next to ABM outputs. Carries no wall-clock fields so
/// reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub params: ModelParams<f64>,
    pub seed: u64,
    pub event_count: u64,
}

/// `time,group,n,probability` for every group present in each snapshot.
pub fn write_snapshots_csv<W: Write>(out: W, snapshots: &[Snapshot]) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "group", "n", "probability"])?;
    for s in snapshots {
        for g in Group::ALL {
            if let Some(p) = s.group(g) {
                write_long(&mut w, &s.time.to_string(), g.label(), p)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_long<W: Write, T: Real>(w: &mut csv::Writer<W>, key: &str, group: &str, p: &WealthPmf<T>) -> CsvResult {
    for (n, v) in p.probs().iter().enumerate() {
        w.write_record([key, group, &n.to_string(), &v.as_f64().to_string()])?;
    }
    Ok(())
}

/// `time,group,n,probability` with groups `c`, `h` and `mix`.
pub fn write_trajectory_csv<W: Write, T: Real>(out: W, states: &[MeanFieldState<T>]) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "group", "n", "probability"])?;
    for s in states {
        let t = s.time.as_f64().to_string();
        write_long(&mut w, &t, "c", &s.pc)?;
        write_long(&mut w, &t, "h", &s.ph)?;
        write_long(&mut w, &t, "mix", &s.mixture())?;
    }
    w.flush()?;
    Ok(())
}

/// `group,n,probability` for named laws.
pub fn write_pmfs_csv<W: Write>(out: W, laws: &[(&str, &WealthPmf<f64>)]) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "n", "probability"])?;
    for (name, p) in laws {
        for (n, v) in p.probs().iter().enumerate() {
            w.write_record([*name, &n.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `time,H,H_equilibrium_minus_H,production_rate`.
pub fn write_h_trace_csv<W: Write>(out: W, rows: &[HRow]) -> CsvResult {
    write_rows(out, rows)
}

/// `mu,n_h,gamma,r_bar,gini,mean_cheater,mean_honest`.
pub fn write_sweep_csv<W: Write>(out: W, sweeps: &[GiniSweepResult]) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "n_h", "gamma", "r_bar", "gini", "mean_cheater", "mean_honest"])?;
    for s in sweeps {
        let (mu, n_h) = (s.params_base.mu().to_string(), s.params_base.n_h().to_string());
        for p in &s.points {
            w.write_record([
                mu.clone(),
                n_h.clone(),
                p.gamma.to_string(),
                p.r_bar.to_string(),
                p.gini.to_string(),
                p.mean_cheater.to_string(),
                p.mean_honest.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `trace,time,energy,dissipation_rate,admissibility_residual`.
pub fn write_energy_csv<W: Write>(out: W, traces: &[Vec<EnergyRow>]) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trace", "time", "energy", "dissipation_rate", "admissibility_residual"])?;
    for (trace, rows) in traces.iter().enumerate() {
        for r in rows {
            w.write_record([
                trace.to_string(),
                r.time.to_string(),
                r.energy.to_string(),
                r.dissipation_rate.to_string(),
                r.admissibility_residual.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Serializes plain records with a header derived from their field names.
pub fn write_rows<W: Write, R: Serialize>(out: W, rows: &[R]) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, V: Serialize + ?Sized>(mut out: W, value: &V) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")
}
