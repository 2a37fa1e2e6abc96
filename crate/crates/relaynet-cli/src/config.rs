//! Experiment configuration: a single JSON object with `model`, `run`,
//! `solver` and `output` blocks. Unknown keys are rejected and validation
//! errors name the offending field.

use serde::Deserialize;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub run: RunConfig,
    pub solver: SolverConfig,
    pub output: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub window: WindowConfig,
    pub partition_delta: f64,
    pub kernel: KernelConfig,
    pub mu_time: MuTimeConfig,
    pub mu_space: MuSpaceConfig,
    pub t_f: f64,
    pub relays: RelayLayout,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub dim: usize,
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelConfig {
    /// No spatial preference: every relay cell weighted by its relay mass.
    Flat,
    /// Matrix loaded from CSV, one row per transmitter cell.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MuTimeConfig {
    Uniform,
    Piecewise { knots: Vec<f64>, mass: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MuSpaceConfig {
    Uniform { mass: f64 },
    PerCell { mass: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RelayLayout {
    /// Total normalized relay mass, spread over cells by volume.
    Scalar { r: f64 },
    /// Explicit per-cell relay masses.
    PerCell { mass: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lambda: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub event: EventConfig,
}

/// Threshold functional of a trace measure at a fixed time: the event is
/// `{measure_time(cell or W) >= threshold}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub measure: EventMeasure,
    #[serde(default)]
    pub time: Option<f64>,
    #[serde(default)]
    pub cell: Option<usize>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventMeasure {
    Frustrated,
    Busy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub time_grid: usize,
    pub rate_beta_grid: usize,
    pub rate_time_steps: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("config", format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| err("config", e.to_string()))?;
        cfg.validate(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    pub fn validate(&self, base_dir: &Path) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.window.dim == 0 {
            return Err(err("model.window.dim", "dimension must be positive"));
        }
        if m.window.bounds.len() != m.window.dim {
            return Err(err("model.window.bounds", "one bound pair per dimension required"));
        }
        for (i, b) in m.window.bounds.iter().enumerate() {
            if !(b[1] > b[0]) {
                return Err(err(
                    &format!("model.window.bounds[{i}]"),
                    "upper bound must exceed lower bound",
                ));
            }
        }
        if !(m.partition_delta > 0.0) {
            return Err(err("model.partition_delta", "must be positive"));
        }
        if !(m.t_f > 0.0) {
            return Err(err("model.t_f", "must be positive"));
        }
        if let KernelConfig::Csv { path } = &m.kernel {
            let resolved = if path.is_absolute() {
                path.clone()
            } else {
                base_dir.join(path)
            };
            if !resolved.exists() {
                return Err(err(
                    "model.kernel.path",
                    format!("kernel file {} does not exist", resolved.display()),
                ));
            }
        }
        if let MuTimeConfig::Piecewise { knots, mass } = &m.mu_time {
            if knots.len() != mass.len() + 1 {
                return Err(err("model.mu_time.knots", "need one more knot than mass entries"));
            }
            if mass.iter().any(|&x| x < 0.0) {
                return Err(err("model.mu_time.mass", "masses must be nonnegative"));
            }
        }
        match &m.mu_space {
            MuSpaceConfig::Uniform { mass } if *mass < 0.0 => {
                return Err(err("model.mu_space.mass", "mass must be nonnegative"));
            }
            MuSpaceConfig::PerCell { mass } if mass.iter().any(|&x| x < 0.0) => {
                return Err(err("model.mu_space.mass", "masses must be nonnegative"));
            }
            _ => {}
        }
        match &m.relays {
            RelayLayout::Scalar { r } if !(*r >= 0.0) => {
                return Err(err("model.relays.r", "must be nonnegative"));
            }
            RelayLayout::PerCell { mass } if mass.iter().any(|&x| x < 0.0) => {
                return Err(err("model.relays.mass", "masses must be nonnegative"));
            }
            _ => {}
        }
        if self.run.lambda.is_empty() {
            return Err(err("run.lambda", "at least one intensity required"));
        }
        if self.run.lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(err("run.lambda", "intensities must be positive"));
        }
        if self.run.replicas == 0 {
            return Err(err("run.replicas", "at least one replica required"));
        }
        if self.run.event.threshold < 0.0 {
            return Err(err("run.event.threshold", "threshold must be nonnegative"));
        }
        if let Some(t) = self.run.event.time {
            if !(t >= 0.0 && t <= m.t_f) {
                return Err(err("run.event.time", "event time must lie in [0, t_f]"));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(err("solver.tol", "tolerance must be positive"));
        }
        if self.solver.time_grid < 2 {
            return Err(err("solver.time_grid", "need at least 2 knots"));
        }
        if self.solver.rate_beta_grid == 0 || self.solver.rate_time_steps == 0 {
            return Err(err("solver.rate_beta_grid", "rate grids must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "model": {
                "window": {"dim": 1, "bounds": [[0.0, 1.0]]},
                "partition_delta": 1.0,
                "kernel": {"type": "flat"},
                "mu_time": {"type": "uniform"},
                "mu_space": {"type": "uniform", "mass": 1.0},
                "t_f": 1.0,
                "relays": {"type": "scalar", "r": 1.0}
            },
            "run": {
                "lambda": [50.0, 100.0],
                "replicas": 100,
                "seed": 7,
                "event": {"measure": "frustrated", "threshold": 0.45}
            },
            "solver": {"tol": 1e-8, "time_grid": 500, "rate_beta_grid": 100, "rate_time_steps": 25},
            "output": "out"
        })
    }

    #[test]
    fn minimal_config_parses() {
        let cfg: ExperimentConfig = serde_json::from_value(minimal_json()).unwrap();
        cfg.validate(Path::new(".")).unwrap();
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let mut v = minimal_json();
        v["run"]["lambda"] = serde_json::json!([-5.0]);
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let e = cfg.validate(Path::new(".")).unwrap_err();
        assert_eq!(e.field, "run.lambda");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal_json();
        v["run"]["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn missing_kernel_file_names_the_path() {
        let mut v = minimal_json();
        v["model"]["kernel"] = serde_json::json!({"type": "csv", "path": "nope.csv"});
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let e = cfg.validate(Path::new("/definitely/missing")).unwrap_err();
        assert_eq!(e.field, "model.kernel.path");
    }
}
