//! Builds simulation-ready objects from a validated configuration.

use crate::config::{ExperimentConfig, KernelConfig, MuSpaceConfig, MuTimeConfig, RelayLayout};
use anyhow::{bail, Context, Result};
use relaynet::measure::{GriddedMeasure, MarkedPointSet, Partition, Window};
use relaynet::rng::{tag, uniform_draw};
use relaynet::sim::{simulate_threshold, NetworkTrace};
use relaynet::spatial::{cell_choice_probabilities, normalize_kernel, partition_window, KernelTable};
use std::path::Path;

pub struct Model {
    pub partition: Partition,
    /// Driver measure `mu_T` with unit time and choice marginals.
    pub mu_t: GriddedMeasure,
    pub relay_mass: Vec<f64>,
    /// Per transmitter cell: probabilities of targeting each relay cell.
    pub cell_probs: Vec<Vec<f64>>,
    pub t_f: f64,
}

fn load_kernel_csv(path: &Path, n_cells: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read kernel file {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("kernel row {i} is not numeric"))?;
        if row.len() != n_cells {
            bail!("kernel row {i} has {} columns, expected {n_cells}", row.len());
        }
        rows.push(row);
    }
    if rows.len() != n_cells {
        bail!("kernel has {} rows, expected {n_cells}", rows.len());
    }
    Ok(rows)
}

pub fn build(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Model> {
    let m = &cfg.model;
    let window = Window::new(m.window.bounds.iter().map(|b| (b[0], b[1])).collect())?;
    let partition = partition_window(&window, m.partition_delta)?;
    let n_cells = partition.len();
    let volumes: Vec<f64> = partition.cells().iter().map(|c| c.volume()).collect();
    let vol_total: f64 = volumes.iter().sum();

    let relay_mass: Vec<f64> = match &m.relays {
        RelayLayout::Scalar { r } => volumes.iter().map(|v| r * v / vol_total).collect(),
        RelayLayout::PerCell { mass } => {
            if mass.len() != n_cells {
                bail!("model.relays.mass: {} entries for {n_cells} cells", mass.len());
            }
            mass.clone()
        }
    };

    let space_mass: Vec<f64> = match &m.mu_space {
        MuSpaceConfig::Uniform { mass } => volumes.iter().map(|v| mass * v / vol_total).collect(),
        MuSpaceConfig::PerCell { mass } => {
            if mass.len() != n_cells {
                bail!("model.mu_space.mass: {} entries for {n_cells} cells", mass.len());
            }
            mass.clone()
        }
    };

    let (time_knots, time_weights): (Vec<f64>, Vec<f64>) = match &m.mu_time {
        MuTimeConfig::Uniform => (vec![0.0, m.t_f], vec![1.0]),
        MuTimeConfig::Piecewise { knots, mass } => {
            if (knots[0]).abs() > 1e-12 || (knots[knots.len() - 1] - m.t_f).abs() > 1e-12 {
                bail!("model.mu_time.knots: must span [0, t_f]");
            }
            let total: f64 = mass.iter().sum();
            if !(total > 0.0) {
                bail!("model.mu_time.mass: total mass must be positive");
            }
            (knots.clone(), mass.iter().map(|x| x / total).collect())
        }
    };

    let nt = time_weights.len();
    let mut masses = Vec::with_capacity(nt * n_cells);
    for tw in &time_weights {
        for sm in &space_mass {
            masses.push(tw * sm);
        }
    }
    let mu_t = GriddedMeasure::new(time_knots, vec![0.0, 1.0], partition.clone(), masses)?;

    let relay_total: f64 = relay_mass.iter().sum();
    let cell_probs: Vec<Vec<f64>> = if relay_total > 0.0 {
        let kernel = match &m.kernel {
            KernelConfig::Flat => KernelTable::constant(&partition, &partition, 1.0)?,
            KernelConfig::Csv { path } => {
                let resolved = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let rows = load_kernel_csv(&resolved, n_cells)?;
                let flat: Vec<Vec<f64>> = rows;
                KernelTable::from_fn(&partition, &partition, |x, y| {
                    let xi = partition.locate(x).unwrap();
                    let yi = partition.locate(y).unwrap();
                    flat[xi][yi]
                })?
            }
        };
        let normalized = normalize_kernel(&kernel, &relay_mass)?;
        (0..n_cells)
            .map(|xi| cell_choice_probabilities(&normalized, &partition, &relay_mass, xi))
            .collect::<relaynet::Result<_>>()?
    } else {
        // degenerate zero-relay model: targets sampled by volume, everyone
        // will be frustrated
        vec![volumes.iter().map(|v| v / vol_total).collect(); n_cells]
    };

    Ok(Model {
        partition,
        mu_t,
        relay_mass,
        cell_probs,
        t_f: m.t_f,
    })
}

impl Model {
    /// Poisson instance at intensity `lambda` with relay-target cells
    /// sampled from the flattened cell-choice probabilities.
    pub fn sample_instance(&self, lambda: f64, seed: u64) -> Result<MarkedPointSet> {
        let pts = relaynet::sim::sample_transmitters(lambda, &self.mu_t, seed)?;
        let mut atoms = pts.atoms().to_vec();
        for (i, atom) in atoms.iter_mut().enumerate() {
            let xc = self
                .partition
                .locate(&atom.position)
                .expect("sampled atom inside the window");
            let probs = &self.cell_probs[xc];
            let z = uniform_draw(seed, &[tag::RELAY_CHOICE, i as u64]);
            let total: f64 = probs.iter().sum();
            let mut acc = 0.0;
            let mut target = probs.len() - 1;
            for (j, &p) in probs.iter().enumerate() {
                acc += p;
                if z * total < acc {
                    target = j;
                    break;
                }
            }
            atom.target_cell = Some(target);
        }
        Ok(MarkedPointSet::new(atoms, pts.weight(), pts.t_f())?)
    }

    pub fn run_trace(&self, lambda: f64, seed: u64) -> Result<NetworkTrace> {
        let pts = self.sample_instance(lambda, seed)?;
        Ok(simulate_threshold(&pts, &self.relay_mass, &self.partition)?)
    }

    /// Per-relay-cell arrival drivers for the spatial fixed point.
    pub fn spatial_drivers(&self) -> Result<Vec<GriddedMeasure>> {
        let n_cells = self.partition.len();
        let nt = self.mu_t.n_time();
        let nu = self.mu_t.n_choice();
        (0..n_cells)
            .map(|relay_cell| {
                let mut masses = Vec::with_capacity(nt * nu * n_cells);
                for ti in 0..nt {
                    for ui in 0..nu {
                        for xc in 0..n_cells {
                            masses.push(
                                self.mu_t.box_mass(ti, ui, xc) * self.cell_probs[xc][relay_cell],
                            );
                        }
                    }
                }
                Ok(GriddedMeasure::new(
                    self.mu_t.time_grid().to_vec(),
                    self.mu_t.choice_grid().to_vec(),
                    self.partition.clone(),
                    masses,
                )?)
            })
            .collect()
    }
}
