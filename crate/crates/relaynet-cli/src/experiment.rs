//! The experiment pipelines behind the CLI verbs.

use crate::config::{EventConfig, EventMeasure, ExperimentConfig};
use crate::model::Model;
use anyhow::{Context, Result};
use rayon::prelude::*;
use relaynet::checks;
use relaynet::checks::CampaignResult;
use relaynet::fluid::{solve_fixed_point_r, ScalarPath};
use relaynet::io;
use relaynet::rate::{event_rate, ldp_slope, scalar_rate_dp};
use relaynet::rng::{derive, tag};
use relaynet::sim::NetworkTrace;
use serde_json::json;
use std::fs;
use std::fs::File;
use std::io::Write as _;
use std::path::PathBuf;

pub struct OutDir(pub PathBuf);

impl OutDir {
    pub fn create(path: &str) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("cannot create output dir {path}"))?;
        Ok(OutDir(PathBuf::from(path)))
    }

    pub fn file(&self, name: &str) -> Result<File> {
        File::create(self.0.join(name))
            .with_context(|| format!("cannot create {}", self.0.join(name).display()))
    }
}

/// Value of the configured threshold functional on one trace.
pub fn event_holds(trace: &NetworkTrace, event: &EventConfig, t_f: f64) -> bool {
    let t = event.time.unwrap_or(t_f);
    let path = match event.measure {
        EventMeasure::Frustrated => &trace.frustrated,
        EventMeasure::Busy => &trace.busy,
    };
    let value = match event.cell {
        Some(c) => path.value_at(t).get(c).copied().unwrap_or(0.0),
        None => path.total_at(t),
    };
    value >= event.threshold
}

/// Monte Carlo estimate of the event probability at one intensity.
/// Deterministic in `(seed, lambda_index)`; replicas fan out in parallel.
pub fn estimate_event_probability(
    model: &Model,
    event: &EventConfig,
    lambda: f64,
    lambda_index: u64,
    replicas: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let hits: u64 = (0..replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<u64> {
            let s = derive(seed, &[tag::REPLICA, lambda_index, r]);
            let trace = model.run_trace(lambda, s)?;
            Ok(event_holds(&trace, event, model.t_f) as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let p = hits as f64 / replicas as f64;
    let stderr = (p * (1.0 - p) / replicas as f64).sqrt();
    Ok((p, stderr))
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(cfg_bytes: &[u8], seed: u64, out: &OutDir) -> Result<()> {
    let manifest = json!({
        "config_sha256": sha256_hex(cfg_bytes),
        "seed": seed,
        "versions": {"relaynet": env!("CARGO_PKG_VERSION")},
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    writeln!(out.file("manifest.json")?, "{}", serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Scalar fluid solution of the configured model (total relay mass).
pub fn fluid_solution(cfg: &ExperimentConfig, model: &Model) -> Result<(ScalarPath, relaynet::fluid::SolverReport)> {
    let r: f64 = model.relay_mass.iter().sum();
    Ok(solve_fixed_point_r(&model.mu_t, r, cfg.solver.tol, cfg.solver.time_grid)?)
}

/// `simulate`: one trace per configured intensity.
pub fn cmd_simulate(cfg: &ExperimentConfig, model: &Model, out: &OutDir) -> Result<()> {
    for (li, &lambda) in cfg.run.lambda.iter().enumerate() {
        let seed = derive(cfg.run.seed, &[tag::REPLICA, li as u64, 0]);
        let trace = model.run_trace(lambda, seed)?;
        io::write_trace_csv(&mut out.file(&format!("trace_lambda{lambda}.csv"))?, &trace)?;
        io::write_outcomes_csv(&mut out.file(&format!("outcomes_lambda{lambda}.csv"))?, &trace)?;
        println!(
            "lambda {lambda}: {} transmitters, frustrated mass {:.6}",
            trace.outcomes.len(),
            trace.frustrated_total()
        );
    }
    Ok(())
}

/// `fluid`: scalar solve, spatial solve when the partition has several
/// cells, and the frustration path.
pub fn cmd_fluid(cfg: &ExperimentConfig, model: &Model, out: &OutDir) -> Result<()> {
    let (beta, report) = fluid_solution(cfg, model)?;
    writeln!(
        out.file("fluid_report.json")?,
        "{}",
        serde_json::to_string_pretty(&io::solver_report_json(&report))?
    )?;
    let busy = relaynet::fluid::busy_measure_path(&model.mu_t, &beta, model.relay_mass.iter().sum())?;
    io::write_step_path_csv(&mut out.file("fluid_busy.csv")?, &busy)?;
    let gamma = relaynet::fluid::frustration_from_busy(&model.mu_t, &busy)?;
    io::write_step_path_csv(&mut out.file("fluid_frustrated.csv")?, &gamma)?;

    if model.partition.len() > 1 {
        let drivers = model.spatial_drivers()?;
        let sol = relaynet::fluid::solve_spatial(&drivers, &model.relay_mass, cfg.solver.tol, cfg.solver.time_grid)?;
        io::write_step_path_csv(&mut out.file("fluid_spatial_frustrated.csv")?, &sol.frustrated)?;
    }
    println!("fluid solve: {} iterations, residual {:.3e}", report.iterations, report.residual);
    Ok(())
}

/// `rate`: cost of the fluid target plus the configured event level.
pub fn cmd_rate(cfg: &ExperimentConfig, model: &Model, out: &OutDir) -> Result<()> {
    let (beta, _) = fluid_solution(cfg, model)?;
    let m = cfg.solver.rate_time_steps;
    let gamma = ScalarPath::from_fn(model.t_f, m, |t| (model.mu_t.arrivals_to(t) - beta.at(t)).max(0.0));
    let dp = scalar_rate_dp(&gamma, cfg.solver.rate_beta_grid, m)?;
    {
        let mut f = out.file("rate_argmin.csv")?;
        writeln!(f, "time,beta")?;
        for (k, &v) in dp.beta.values().iter().enumerate() {
            writeln!(f, "{},{}", dp.beta.knot_time(k), v)?;
        }
    }
    let report = io::rate_report_json(dp.value, dp.infinite, dp.beta_grid, dp.time_steps, "rate_argmin.csv");
    writeln!(out.file("rate_report.json")?, "{}", serde_json::to_string_pretty(&report)?)?;

    let a = cfg.run.event.threshold;
    let ev = event_rate(a, cfg.solver.rate_beta_grid, cfg.solver.rate_time_steps, model.t_f)?;
    writeln!(
        out.file("event_rate.json")?,
        "{}",
        serde_json::to_string_pretty(&json!({"threshold": a, "rate": ev}))?
    )?;
    println!("fluid-target cost: {} (infinite: {}); event rate at {a}: {ev:.6}", dp.value, dp.infinite);
    Ok(())
}

/// `ldp-study` / `run_experiment`: per-intensity probabilities, the slope
/// fit, the fluid comparison, a lemma summary and the manifest.
pub fn cmd_ldp_study(cfg: &ExperimentConfig, model: &Model, cfg_bytes: &[u8], out: &OutDir) -> Result<()> {
    write_manifest(cfg_bytes, cfg.run.seed, out)?;

    let mut prob_rows = Vec::new();
    let mut slope_rows = Vec::new();
    for (li, &lambda) in cfg.run.lambda.iter().enumerate() {
        let (p, se) = estimate_event_probability(
            model,
            &cfg.run.event,
            lambda,
            li as u64,
            cfg.run.replicas,
            cfg.run.seed,
        )?;
        prob_rows.push((lambda, cfg.run.replicas, p, se));
        if p > 0.0 {
            slope_rows.push((lambda, -(p.ln())));
        }
        println!("lambda {lambda}: p_hat = {p:.6e} (stderr {se:.2e})");
    }
    io::write_probabilities_csv(&mut out.file("probabilities.csv")?, &prob_rows)?;
    io::write_slope_csv(&mut out.file("slope.csv")?, &slope_rows)?;

    let lambdas: Vec<f64> = prob_rows.iter().map(|r| r.0).collect();
    let ps: Vec<f64> = prob_rows.iter().map(|r| r.2).collect();
    let slope = ldp_slope(&lambdas, &ps);
    let dp_rate = event_rate(
        cfg.run.event.threshold,
        cfg.solver.rate_beta_grid,
        cfg.solver.rate_time_steps,
        model.t_f,
    )?;
    let summary = match slope {
        Ok(s) if dp_rate > 0.0 => {
            json!({"slope": s, "dp_rate": dp_rate, "relative_gap": (s - dp_rate).abs() / dp_rate})
        }
        Ok(s) => json!({"slope": s, "dp_rate": dp_rate}),
        Err(ref e) => json!({"slope": null, "dp_rate": dp_rate, "error": e.to_string()}),
    };
    writeln!(out.file("slope_fit.json")?, "{}", serde_json::to_string_pretty(&summary)?)?;

    // fluid comparison at the largest intensity
    let (beta, _) = fluid_solution(cfg, model)?;
    let lambda_max = cfg.run.lambda.iter().copied().fold(f64::MIN, f64::max);
    let comp_reps = cfg.run.replicas.min(100).max(1);
    let grid: Vec<f64> = (0..=100).map(|k| model.t_f * k as f64 / 100.0).collect();
    let mean_busy: Vec<f64> = {
        // per-replica paths collected in index order, then summed
        // sequentially: float reduction order must not depend on scheduling
        let paths: Vec<Vec<f64>> = (0..comp_reps as u64)
            .into_par_iter()
            .map(|r| -> Result<Vec<f64>> {
                let s = derive(cfg.run.seed, &[tag::PILOT, r]);
                let trace = model.run_trace(lambda_max, s)?;
                Ok(grid.iter().map(|&t| trace.busy.total_at(t)).collect())
            })
            .collect::<Result<_>>()?;
        let mut sums = vec![0.0; grid.len()];
        for p in &paths {
            for (s, v) in sums.iter_mut().zip(p) {
                *s += v;
            }
        }
        sums.iter().map(|s| s / comp_reps as f64).collect()
    };
    {
        let mut f = out.file("fluid_compare.csv")?;
        writeln!(f, "time,fluid_busy,sim_mean_busy")?;
        for (k, &t) in grid.iter().enumerate() {
            writeln!(f, "{t},{},{}", beta.at(t), mean_busy[k])?;
        }
    }

    let lemmas = default_lemma_campaign(cfg.run.seed, 50)?;
    io::write_lemma_csv(&mut out.file("lemma_checks.csv")?, &lemmas)?;
    let all_ok = lemmas.iter().all(|l| l.passed());
    println!("lemma checks: {}", if all_ok { "all passed" } else { "violations found" });
    Ok(())
}

/// The standard lemma campaign at a configurable instance count.
pub fn default_lemma_campaign(seed: u64, n: usize) -> Result<Vec<CampaignResult>> {
    let g = checks::euler_bounds_gridded(seed, n)?;
    let e = checks::euler_bounds_empirical(derive(seed, &[1]), n)?;
    let mut rows = vec![g.dominance, g.error_bound, e.dominance, e.error_bound];
    rows.push(checks::norm_approx_band_gridded(derive(seed, &[2]), n)?);
    rows.push(checks::norm_approx_band_empirical(derive(seed, &[3]), n)?);
    rows.push(checks::relay_dominance(derive(seed, &[4]), n, &[0.5, 0.9])?);
    rows.push(checks::lipschitz_edits(derive(seed, &[5]), n)?);
    rows.push(checks::driver_stability(derive(seed, &[6]), n.min(30))?);
    rows.push(checks::localization_identity(derive(seed, &[7]), n)?);
    Ok(rows)
}

/// `check-lemmas`: the standard campaign plus the statistical checks that
/// need distribution functions.
pub fn cmd_check_lemmas(cfg: &ExperimentConfig, out: &OutDir) -> Result<()> {
    let n = cfg.run.replicas.clamp(20, 500);
    let mut rows = default_lemma_campaign(cfg.run.seed, n)?;

    // previsible bound: empirical CDF of near-threshold counts dominated by
    // the Poisson CDF up to one DKW band
    {
        use statrs::distribution::{DiscreteCDF, Poisson};
        let (lambda, eps, reps) = (200.0, 0.05, cfg.run.replicas.clamp(500, 10_000));
        let counts = checks::near_threshold_counts(derive(cfg.run.seed, &[8]), reps, lambda, eps)?;
        let poisson = Poisson::new(2.0 * eps * lambda).expect("positive mean");
        let band = (f64::ln(2.0 / 1e-3) / (2.0 * reps as f64)).sqrt();
        let max_k = counts.iter().copied().max().unwrap_or(0) + 5;
        let mut worst = f64::NEG_INFINITY;
        for k in 0..=max_k {
            let emp = counts.iter().filter(|&&c| c <= k).count() as f64 / reps as f64;
            let theo = poisson.cdf(k);
            worst = worst.max(theo - band - emp);
        }
        rows.push(CampaignResult {
            lemma_id: "previsible-poisson-bound".into(),
            instances: reps,
            violations: usize::from(worst > 0.0),
            max_slack: worst,
        });
    }

    // distributional equality of the two simulators on the enumerable
    // instance, as a chi-square homogeneity check
    {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let reps = cfg.run.replicas.clamp(1000, 20_000);
        let (a, b) = checks::mark_equivalence_counts(derive(cfg.run.seed, &[9]), reps)?;
        let stat = chi_square_two_sample(&a[1..3], &b[1..3]);
        let crit = ChiSquared::new(1.0).expect("df 1").inverse_cdf(1.0 - 1e-3);
        rows.push(CampaignResult {
            lemma_id: "markov-equivalence-chi2".into(),
            instances: 2 * reps,
            violations: usize::from(stat > crit),
            max_slack: stat - crit,
        });
    }

    io::write_lemma_csv(&mut out.file("lemma_checks.csv")?, &rows)?;
    for r in &rows {
        println!(
            "{:32} instances {:7} violations {:3} max_slack {:+.3e}  [{}]",
            r.lemma_id,
            r.instances,
            r.violations,
            r.max_slack,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    Ok(())
}

/// Two-sample chi-square statistic over matched categories.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> f64 {
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let pooled = (x + y) as f64 / (na + nb);
        let (ea, eb) = (na * pooled, nb * pooled);
        if ea > 0.0 {
            stat += (x as f64 - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            stat += (y as f64 - eb).powi(2) / eb;
        }
    }
    stat
}
