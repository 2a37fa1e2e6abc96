//! Serialization of paths, measures, traces and reports.
//!
//! CSV schemas are fixed: step paths as `(time, cell_index, mass)`, traces
//! as `(time, cell, frustrated_mass, busy_mass)`, outcome logs as
//! `(index, t, u, cell, frustrated)`, probabilities as
//! `(lambda, replicas, p_hat, stderr)`, slopes as `(lambda, minus_log_p)`
//! and lemma checks as `(lemma_id, instances, violations, max_slack)`.

use crate::checks::CampaignResult;
use crate::error::{Error, Result};
use crate::fluid::SolverReport;
use crate::measure::StepPath;
use crate::sim::NetworkTrace;
use serde_json::json;
use std::io::Write;

fn io_err(e: std::io::Error) -> Error {
    Error::Domain(format!("write failed: {e}"))
}

/// `(time, cell_index, mass)` rows, one per event and cell.
pub fn write_step_path_csv(w: &mut impl Write, path: &StepPath) -> Result<()> {
    writeln!(w, "time,cell_index,mass").map_err(io_err)?;
    for (i, &t) in path.times().iter().enumerate() {
        for (ci, &m) in path.values()[i].iter().enumerate() {
            writeln!(w, "{t},{ci},{m}").map_err(io_err)?;
        }
    }
    Ok(())
}

/// Per-cell measure as `{"cells": [...], "mass": [...]}`.
pub fn measure_json(mass: &[f64]) -> serde_json::Value {
    json!({
        "cells": (0..mass.len()).collect::<Vec<usize>>(),
        "mass": mass,
    })
}

/// `(time, cell, frustrated_mass, busy_mass)` on the merged event grid.
pub fn write_trace_csv(w: &mut impl Write, trace: &NetworkTrace) -> Result<()> {
    writeln!(w, "time,cell,frustrated_mass,busy_mass").map_err(io_err)?;
    let mut times: Vec<f64> = trace
        .frustrated
        .times()
        .iter()
        .chain(trace.busy.times())
        .copied()
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    for t in times {
        let f = trace.frustrated.value_at(t);
        let b = trace.busy.value_at(t);
        for ci in 0..f.len() {
            writeln!(w, "{t},{ci},{},{}", f[ci], b[ci]).map_err(io_err)?;
        }
    }
    Ok(())
}

/// `(index, t, u, cell, frustrated)` per transmitter.
pub fn write_outcomes_csv(w: &mut impl Write, trace: &NetworkTrace) -> Result<()> {
    writeln!(w, "index,t,u,cell,frustrated").map_err(io_err)?;
    for o in &trace.outcomes {
        writeln!(w, "{},{},{},{},{}", o.index, o.time, o.mark, o.cell, o.frustrated)
            .map_err(io_err)?;
    }
    Ok(())
}

/// Solver report `{iterations, residual, grid_size}`.
pub fn solver_report_json(report: &SolverReport) -> serde_json::Value {
    json!({
        "iterations": report.iterations,
        "residual": report.residual,
        "grid_size": report.grid_size,
    })
}

/// Rate report `{value, grid, argmin_path_csv}`.
pub fn rate_report_json(value: f64, infinite: bool, beta_grid: usize, time_steps: usize, argmin_path_csv: &str) -> serde_json::Value {
    json!({
        "value": if infinite { serde_json::Value::String("infinite".into()) } else { json!(value) },
        "grid": {"beta": beta_grid, "time_steps": time_steps},
        "argmin_path_csv": argmin_path_csv,
    })
}

/// `(lambda, replicas, p_hat, stderr)` rows.
pub fn write_probabilities_csv(
    w: &mut impl Write,
    rows: &[(f64, usize, f64, f64)],
) -> Result<()> {
    writeln!(w, "lambda,replicas,p_hat,stderr").map_err(io_err)?;
    for &(lambda, replicas, p_hat, stderr) in rows {
        writeln!(w, "{lambda},{replicas},{p_hat},{stderr}").map_err(io_err)?;
    }
    Ok(())
}

/// `(lambda, minus_log_p)` rows for the slope fit.
pub fn write_slope_csv(w: &mut impl Write, rows: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "lambda,minus_log_p").map_err(io_err)?;
    for &(lambda, mlp) in rows {
        writeln!(w, "{lambda},{mlp}").map_err(io_err)?;
    }
    Ok(())
}

/// `(lemma_id, instances, violations, max_slack)` rows.
pub fn write_lemma_csv(w: &mut impl Write, rows: &[CampaignResult]) -> Result<()> {
    writeln!(w, "lemma_id,instances,violations,max_slack").map_err(io_err)?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.lemma_id, r.instances, r.violations, r.max_slack)
            .map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::StepPath;

    #[test]
    fn step_path_csv_roundtrips_shape() {
        let mut p = StepPath::zero(1.0, 2);
        p.push(0.25, vec![0.5, 0.0]).unwrap();
        p.push(0.5, vec![0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_step_path_csv(&mut buf, &p).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time,cell_index,mass");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert_eq!(lines[1], "0.25,0,0.5");
    }

    #[test]
    fn measure_json_shape() {
        let v = measure_json(&[0.1, 0.9]);
        assert_eq!(v["cells"].as_array().unwrap().len(), 2);
        assert_eq!(v["mass"][1], 0.9);
    }
}
