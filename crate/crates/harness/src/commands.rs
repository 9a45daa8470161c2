//! The four subcommands: run an experiment, write its CSV files and manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use aggr_core::fv::write_diagnostics_csv;
use serde_json::{json, Value};

use crate::config::{InitialSpec, SimConfig};
use crate::experiments::{self, particle_run, ComparisonRow, ConvergenceReport};
use crate::manifest::{Manifest, OutputDir};
use crate::HarnessError;

fn snapshot_name(index: usize, time: f64) -> String {
    format!("snapshots/rho_{index:03}_t{time:.6}.csv")
}

/// Scheme run: one `x,rho` file per sample time plus `diagnostics.csv`.
pub fn cmd_simulate(config: &SimConfig) -> Result<Manifest, HarnessError> {
    let start = Instant::now();
    let output = experiments::simulate(config)?;
    let mut out = OutputDir::create(&config.output_dir)?;
    for (k, snap) in output.snapshots.iter().enumerate() {
        out.write(&snapshot_name(k, snap.time), |w| snap.state.write_csv(w))?;
    }
    out.write("diagnostics.csv", |w| write_diagnostics_csv(&output.diagnostics, w))?;

    let d = &output.diagnostics;
    let mass0 = d.first().map_or(0.0, |r| r.mass);
    let mut summary = BTreeMap::new();
    summary.insert("steps".into(), json!(d.last().map_or(0, |r| r.step)));
    summary.insert("dt".into(), json!(output.dt));
    summary.insert("velocity_bound".into(), json!(output.velocity_bound));
    summary.insert("gamma".into(), json!(config.gamma));
    summary.insert("final_time".into(), json!(output.final_state().time));
    summary.insert("snapshots".into(), json!(output.snapshots.len()));
    summary.insert(
        "max_mass_drift".into(),
        json!(d.iter().map(|r| (r.mass - mass0).abs()).fold(0.0, f64::max)),
    );
    summary.insert("min_rho".into(), json!(d.iter().map(|r| r.min_rho).fold(f64::INFINITY, f64::min)));
    summary.insert("max_abs_a".into(), json!(d.iter().map(|r| r.max_abs_a).fold(0.0, f64::max)));
    summary.insert(
        "max_entropy_residual".into(),
        d.iter()
            .filter_map(|r| r.entropy_residual)
            .reduce(f64::max)
            .map_or(Value::Null, |v| json!(v)),
    );
    summary.insert("final_support_cells".into(), json!(d.last().map_or(0, |r| r.support_cells())));
    out.finish("simulate", config, summary, start.elapsed().as_secs_f64())
}

/// Sticky-particle run from atomic data: `trajectory.csv` and `final_atoms.csv`.
pub fn cmd_particles(config: &SimConfig) -> Result<Manifest, HarnessError> {
    if !matches!(config.initial, InitialSpec::Atoms { .. }) {
        return Err(HarnessError::Config("particles needs atomic initial data".to_string()));
    }
    let start = Instant::now();
    let aggr_core::fv::InitialData::Atoms(initial) = config.initial_data()? else {
        unreachable!("atoms spec yields atoms");
    };
    let (system, log) = particle_run(config, &initial)?;
    let mut out = OutputDir::create(&config.output_dir)?;
    out.write("trajectory.csv", |w| log.write_csv(w))?;
    out.write("final_atoms.csv", |w| system.measure().write_csv(w))?;
    let merges: Vec<f64> = log.merges().map(|e| e.time).collect();
    let mut summary = BTreeMap::new();
    summary.insert("initial_particles".into(), json!(initial.len()));
    summary.insert("final_particles".into(), json!(system.len()));
    summary.insert("merge_times".into(), json!(merges));
    summary.insert("final_time".into(), json!(system.time()));
    out.finish("particles", config, summary, start.elapsed().as_secs_f64())
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "time,w1")?;
    for r in rows {
        writeln!(w, "{:.16e},{:.16e}", r.time, r.w1)?;
    }
    Ok(())
}

/// `W₁` between the scheme and a particle run at each sample time: `compare.csv`.
pub fn cmd_compare(config: &SimConfig) -> Result<Manifest, HarnessError> {
    let start = Instant::now();
    let rows = experiments::compare(config)?;
    let mut out = OutputDir::create(&config.output_dir)?;
    out.write("compare.csv", |w| write_comparison_csv(&rows, w))?;
    let mut summary = BTreeMap::new();
    summary.insert("particles".into(), json!(config.particles.compare));
    summary.insert("w1_initial".into(), json!(rows.first().map(|r| r.w1)));
    summary.insert("w1_final".into(), json!(rows.last().map(|r| r.w1)));
    summary.insert("w1_max".into(), json!(rows.iter().map(|r| r.w1).fold(0.0, f64::max)));
    out.finish("compare", config, summary, start.elapsed().as_secs_f64())
}

pub fn write_convergence_csv<W: Write>(report: &ConvergenceReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "n_cells,dx,w1_error,ratio")?;
    for (k, r) in report.rows.iter().enumerate() {
        let ratio = if k == 0 {
            "NaN".to_string()
        } else {
            format!("{:.16e}", report.ratios[k - 1])
        };
        writeln!(w, "{},{:.16e},{:.16e},{}", r.n_cells, r.dx, r.w1_error, ratio)?;
    }
    Ok(())
}

/// Grid refinement against a particle oracle: `convergence.csv` plus each
/// level's final density under `level_<n>/`.
pub fn cmd_converge(config: &SimConfig) -> Result<Manifest, HarnessError> {
    let start = Instant::now();
    experiments::check_levels(&config.levels)?;
    let pool = experiments::thread_pool()?;
    let report = experiments::converge(config, &pool)?;
    let mut out = OutputDir::create(&config.output_dir)?;
    out.write("convergence.csv", |w| write_convergence_csv(&report, w))?;
    for row in &report.rows {
        out.write(&format!("level_{}/final.csv", row.n_cells), |w| row.final_state.write_csv(w))?;
    }
    let mut summary = BTreeMap::new();
    summary.insert("oracle_particles".into(), json!(report.oracle_particles));
    summary.insert("ratios".into(), json!(report.ratios));
    summary.insert(
        "levels".into(),
        Value::Array(
            report
                .rows
                .iter()
                .map(|r| json!({"n_cells": r.n_cells, "dx": r.dx, "w1_error": r.w1_error, "runtime_seconds": r.runtime_seconds}))
                .collect(),
        ),
    );
    out.finish("converge", config, summary, start.elapsed().as_secs_f64())
}
