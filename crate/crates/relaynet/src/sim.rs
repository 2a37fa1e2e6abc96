//! Finite-intensity network dynamics.
//!
//! Two equivalent simulators: `simulate_relay_choice` samples an explicit
//! relay for every transmitter proportionally to the preference kernel;
//! `simulate_threshold` drives the same law through uniform marks compared
//! against the per-cell busy fraction. A third, `replay_assigned`, replays
//! counting measures whose relay is already fixed, which makes pathwise
//! perturbation arguments exact. `coupled_poisson` realizes two kernels as
//! sublevel sets of one extended configuration.

use crate::error::{Error, Result};
use crate::measure::{GriddedMeasure, MarkedAtom, MarkedPointSet, Partition, StepPath};
use crate::rng::{stream, tag};
use crate::spatial::KernelTable;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// Fixed relay locations with the normalized count `r = |Y| / lambda`.
#[derive(Debug, Clone)]
pub struct RelayConfig {
    locations: Vec<Vec<f64>>,
    normalized_count: f64,
}

impl RelayConfig {
    pub fn new(locations: Vec<Vec<f64>>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::domain("lambda must be positive"));
        }
        Ok(RelayConfig {
            normalized_count: locations.len() as f64 / lambda,
            locations,
        })
    }

    /// Uniformly scattered relays in the window.
    pub fn sample_uniform(n: usize, window: &crate::measure::Window, lambda: f64, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, &[tag::RELAY_CHOICE, u64::MAX]);
        let locations = (0..n)
            .map(|_| {
                window
                    .bounds()
                    .iter()
                    .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect()
            })
            .collect();
        RelayConfig::new(locations, lambda)
    }

    pub fn locations(&self) -> &[Vec<f64>] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn normalized_count(&self) -> f64 {
        self.normalized_count
    }

    /// Per-cell relay masses `l(W_i) = (number of relays in W_i) / lambda`.
    pub fn empirical_mass(&self, partition: &Partition, lambda: f64) -> Result<Vec<f64>> {
        let mut mass = vec![0.0; partition.len()];
        for y in &self.locations {
            let i = partition
                .locate(y)
                .ok_or_else(|| Error::domain("relay outside the window"))?;
            mass[i] += 1.0 / lambda;
        }
        Ok(mass)
    }
}

/// Outcome of one transmitter request.
#[derive(Debug, Clone)]
pub struct TransmitterOutcome {
    pub index: usize,
    pub time: f64,
    pub mark: f64,
    pub cell: usize,
    pub target_cell: Option<usize>,
    pub frustrated: bool,
}

/// Frustrated and busy measure paths plus the per-transmitter log.
#[derive(Debug, Clone)]
pub struct NetworkTrace {
    pub frustrated: StepPath,
    pub busy: StepPath,
    pub outcomes: Vec<TransmitterOutcome>,
}

impl NetworkTrace {
    /// Worst absolute violation of `Gamma_t(W) + B_t(W) = arrival mass`,
    /// checked after every request.
    pub fn conservation_slack(&self, weight: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, o) in self.outcomes.iter().enumerate() {
            let arrived = weight * (i + 1) as f64;
            let total = self.frustrated.total_at(o.time) + self.busy.total_at(o.time);
            worst = worst.max((total - arrived).abs());
        }
        worst
    }

    pub fn frustrated_total(&self) -> f64 {
        self.frustrated.total_at(self.frustrated.t_f())
    }
}

/// Poisson transmitter configuration with intensity `lambda * mu_t`:
/// the atom count is Poisson with mean `lambda * mu_t(V)` and atoms are
/// i.i.d. proportional to `mu_t`; atoms carry weight `1 / lambda`.
pub fn sample_transmitters(lambda: f64, mu_t: &GriddedMeasure, seed: u64) -> Result<MarkedPointSet> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain("lambda must be positive and finite"));
    }
    let total = mu_t.total_mass();
    if total < 0.0 {
        return Err(Error::domain("driver mass must be nonnegative"));
    }
    let weight = 1.0 / lambda;
    if total == 0.0 {
        return Ok(MarkedPointSet::empty(weight, mu_t.t_f()));
    }

    let n = {
        let mut rng = stream(seed, &[tag::COUNT]);
        let poi = Poisson::new(lambda * total)
            .map_err(|e| Error::domain(format!("invalid Poisson mean: {e}")))?;
        poi.sample(&mut rng) as usize
    };

    // cumulative box masses for categorical sampling
    let nt = mu_t.n_time();
    let nu = mu_t.n_choice();
    let nc = mu_t.n_cells();
    let mut cum = Vec::with_capacity(nt * nu * nc);
    let mut acc = 0.0;
    for ti in 0..nt {
        for ui in 0..nu {
            for ci in 0..nc {
                acc += mu_t.box_mass(ti, ui, ci);
                cum.push(acc);
            }
        }
    }

    let tg = mu_t.time_grid();
    let cg = mu_t.choice_grid();
    let cells = mu_t.partition().cells();
    let mut atoms = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(seed, &[tag::ATOM, i as u64]);
        let z = rng.random::<f64>() * acc;
        let idx = cum.partition_point(|&c| c < z).min(cum.len() - 1);
        let ci = idx % nc;
        let ui = (idx / nc) % nu;
        let ti = idx / (nc * nu);
        let t = tg[ti] + (tg[ti + 1] - tg[ti]) * rng.random::<f64>();
        let u = cg[ui] + (cg[ui + 1] - cg[ui]) * rng.random::<f64>();
        let position = cells[ci]
            .lo
            .iter()
            .zip(&cells[ci].hi)
            .map(|(&a, &b)| a + (b - a) * rng.random::<f64>())
            .collect();
        atoms.push(MarkedAtom {
            time: t,
            mark: u,
            position,
            target_cell: None,
        });
    }
    MarkedPointSet::new(atoms, weight, mu_t.t_f())
}

/// Relay-choice dynamics: transmitters are processed in time order, each
/// samples one relay proportionally to the kernel, and the request fails
/// when the relay is already occupied. Occupation is permanent.
pub fn simulate_relay_choice(
    points: &MarkedPointSet,
    relays: &RelayConfig,
    kernel: &KernelTable,
    seed: u64,
) -> Result<NetworkTrace> {
    if relays.is_empty() {
        return Err(Error::assumption("no relays configured"));
    }
    let x_part = kernel.x_partition();
    let y_part = kernel.y_partition();
    let relay_cells: Vec<usize> = relays
        .locations()
        .iter()
        .map(|y| {
            y_part
                .locate(y)
                .ok_or_else(|| Error::domain("relay outside the kernel grid"))
        })
        .collect::<Result<_>>()?;

    // per transmitter-cell cumulative kernel weights over relays
    let mut choice_cache: Vec<Option<Vec<f64>>> = vec![None; x_part.len()];
    let weight = points.weight();
    let n_cells = x_part.len();
    let mut occupied = vec![false; relays.len()];
    let mut frustrated = StepPath::zero(points.t_f(), n_cells);
    let mut busy = StepPath::zero(points.t_f(), n_cells);
    let mut gamma = vec![0.0; n_cells];
    let mut beta = vec![0.0; n_cells];
    let mut outcomes = Vec::with_capacity(points.len());

    for (i, atom) in points.atoms().iter().enumerate() {
        let xc = x_part
            .locate(&atom.position)
            .ok_or_else(|| Error::domain("transmitter outside the window"))?;
        let cum = choice_cache[xc].get_or_insert_with(|| {
            let mut acc = 0.0;
            relay_cells
                .iter()
                .map(|&yc| {
                    acc += kernel.value(xc, yc);
                    acc
                })
                .collect()
        });
        let total = *cum.last().unwrap();
        if !(total > 0.0) {
            return Err(Error::assumption(format!(
                "transmitter at cell {xc} has zero preference for every relay"
            )));
        }
        let z = stream(seed, &[tag::RELAY_CHOICE, i as u64]).random::<f64>() * total;
        let j = cum.partition_point(|&c| c < z).min(relays.len() - 1);
        let failed = occupied[j];
        if failed {
            gamma[xc] += weight;
            frustrated.push(atom.time, gamma.clone())?;
        } else {
            occupied[j] = true;
            beta[xc] += weight;
            busy.push(atom.time, beta.clone())?;
        }
        outcomes.push(TransmitterOutcome {
            index: i,
            time: atom.time,
            mark: atom.mark,
            cell: xc,
            target_cell: Some(relay_cells[j]),
            frustrated: failed,
        });
    }
    Ok(NetworkTrace {
        frustrated,
        busy,
        outcomes,
    })
}

/// Threshold dynamics: a transmitter targeting cell `i` succeeds exactly
/// when its mark clears the cell's busy fraction `B_{t-}(i) / relay_mass(i)`.
/// Cells with zero relay mass frustrate every request.
pub fn simulate_threshold(
    points: &MarkedPointSet,
    relay_mass: &[f64],
    partition: &Partition,
) -> Result<NetworkTrace> {
    if relay_mass.len() != partition.len() {
        return Err(Error::mismatch(format!(
            "{} relay masses for {} cells",
            relay_mass.len(),
            partition.len()
        )));
    }
    let weight = points.weight();
    let n_cells = partition.len();
    let mut busy_target = vec![0.0; relay_mass.len()];
    let mut frustrated = StepPath::zero(points.t_f(), n_cells);
    let mut busy = StepPath::zero(points.t_f(), n_cells);
    let mut gamma = vec![0.0; n_cells];
    let mut beta = vec![0.0; n_cells];
    let mut outcomes = Vec::with_capacity(points.len());

    for (i, atom) in points.atoms().iter().enumerate() {
        let tc = atom
            .target_cell
            .ok_or_else(|| Error::domain("atom carries no relay-target cell"))?;
        if tc >= relay_mass.len() {
            return Err(Error::mismatch("target cell outside the partition"));
        }
        let xc = partition
            .locate(&atom.position)
            .ok_or_else(|| Error::domain("transmitter outside the window"))?;
        let r = relay_mass[tc];
        let success = r > 0.0 && atom.mark >= busy_target[tc] / r;
        if success {
            busy_target[tc] += weight;
            beta[xc] += weight;
            busy.push(atom.time, beta.clone())?;
        } else {
            gamma[xc] += weight;
            frustrated.push(atom.time, gamma.clone())?;
        }
        outcomes.push(TransmitterOutcome {
            index: i,
            time: atom.time,
            mark: atom.mark,
            cell: xc,
            target_cell: Some(tc),
            frustrated: !success,
        });
    }
    Ok(NetworkTrace {
        frustrated,
        busy,
        outcomes,
    })
}

/// One point of a counting measure with a fixed relay assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignedAtom {
    pub time: f64,
    pub cell: usize,
    pub relay: usize,
}

/// Deterministic replay of a counting measure with assigned relays: the
/// frustration path needs no extra randomness once targets are fixed.
pub fn replay_assigned(
    atoms: &[AssignedAtom],
    n_cells: usize,
    n_relays: usize,
    weight: f64,
    t_f: f64,
) -> Result<StepPath> {
    let mut sorted: Vec<&AssignedAtom> = atoms.iter().collect();
    sorted.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    let mut occupied = vec![false; n_relays];
    let mut gamma = vec![0.0; n_cells];
    let mut path = StepPath::zero(t_f, n_cells);
    for atom in sorted {
        if atom.cell >= n_cells || atom.relay >= n_relays {
            return Err(Error::mismatch("assigned atom outside the configuration"));
        }
        if occupied[atom.relay] {
            gamma[atom.cell] += weight;
            path.push(atom.time, gamma.clone())?;
        } else {
            occupied[atom.relay] = true;
        }
    }
    Ok(path)
}

/// Extended configuration point used by the level coupling.
#[derive(Debug, Clone)]
pub struct ExtendedPoint {
    pub time: f64,
    pub mark: f64,
    pub x_cell: usize,
    pub y_cell: usize,
    pub level: f64,
}

/// Base intensity of the extended configuration: time uniform on
/// `[0, t_f]`, per-cell transmitter and relay masses, level uniform on
/// `[0, level_cap]`, all scaled by `lambda`.
#[derive(Debug, Clone)]
pub struct CouplingBase {
    pub lambda: f64,
    pub t_f: f64,
    pub x_mass: Vec<f64>,
    pub y_mass: Vec<f64>,
    pub level_cap: f64,
}

/// Couples the Poisson configurations of two kernels through one extended
/// sample: `Z_f` keeps the points with level below `f`, `Z_g` those below
/// `g`. Returns both projections and the norm distance
/// `weight * max(#{g < v <= f}, #{f < v <= g})`, which equals the atomic
/// total variation exactly.
pub fn coupled_poisson(
    f: &KernelTable,
    g: &KernelTable,
    base: &CouplingBase,
    seed: u64,
) -> Result<(MarkedPointSet, MarkedPointSet, f64)> {
    if f.nx() != g.nx() || f.ny() != g.ny() {
        return Err(Error::mismatch("kernel tables live on different grids"));
    }
    if base.x_mass.len() != f.nx() || base.y_mass.len() != f.ny() {
        return Err(Error::mismatch("base masses do not match the kernel grid"));
    }
    if !(base.lambda > 0.0) || !(base.t_f > 0.0) || !(base.level_cap > 0.0) {
        return Err(Error::domain("lambda, horizon and level cap must be positive"));
    }
    if f.sup_value() > base.level_cap || g.sup_value() > base.level_cap {
        return Err(Error::domain("level cap below the supremum of a kernel"));
    }

    let x_total: f64 = base.x_mass.iter().sum();
    let y_total: f64 = base.y_mass.iter().sum();
    let mean = base.lambda * x_total * y_total * base.level_cap;
    let weight = 1.0 / base.lambda;
    let n = if mean > 0.0 {
        let mut rng = stream(seed, &[tag::COUNT, tag::LEVEL_POINT]);
        Poisson::new(mean)
            .map_err(|e| Error::domain(format!("invalid Poisson mean: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };

    let cum = |mass: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        mass.iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect()
    };
    let x_cum = cum(&base.x_mass);
    let y_cum = cum(&base.y_mass);
    let x_cells = f.x_partition().cells();

    let mut atoms_f = Vec::new();
    let mut atoms_g = Vec::new();
    let mut band_fg = 0usize; // g < v <= f
    let mut band_gf = 0usize; // f < v <= g
    for i in 0..n {
        let mut rng = stream(seed, &[tag::LEVEL_POINT, i as u64]);
        let t = base.t_f * rng.random::<f64>();
        let u = rng.random::<f64>();
        let zx = rng.random::<f64>() * x_total;
        let xc = x_cum.partition_point(|&c| c < zx).min(x_cum.len() - 1);
        let zy = rng.random::<f64>() * y_total;
        let yc = y_cum.partition_point(|&c| c < zy).min(y_cum.len() - 1);
        let v = base.level_cap * rng.random::<f64>();
        let position: Vec<f64> = x_cells[xc]
            .lo
            .iter()
            .zip(&x_cells[xc].hi)
            .map(|(&a, &b)| a + (b - a) * rng.random::<f64>())
            .collect();
        let in_f = v <= f.value(xc, yc);
        let in_g = v <= g.value(xc, yc);
        let atom = MarkedAtom {
            time: t,
            mark: u,
            position,
            target_cell: Some(yc),
        };
        if in_f {
            atoms_f.push(atom.clone());
        }
        if in_g {
            atoms_g.push(atom.clone());
        }
        match (in_f, in_g) {
            (true, false) => band_fg += 1,
            (false, true) => band_gf += 1,
            _ => {}
        }
    }
    let tv = weight * band_fg.max(band_gf) as f64;
    Ok((
        MarkedPointSet::new(atoms_f, weight, base.t_f)?,
        MarkedPointSet::new(atoms_g, weight, base.t_f)?,
        tv,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{total_variation_atomic, Window};
    use crate::spatial::partition_window;

    fn unit_driver(mass: f64) -> GriddedMeasure {
        let part = Partition::single_cell(Window::unit_interval());
        GriddedMeasure::uniform(1.0, mass, 2, 2, part).unwrap()
    }

    #[test]
    fn sampling_zero_mass_gives_empty_set() {
        let nu = unit_driver(0.0);
        let pts = sample_transmitters(100.0, &nu, 1).unwrap();
        assert!(pts.is_empty());
        assert!(sample_transmitters(0.0, &nu, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let nu = unit_driver(1.0);
        let a = sample_transmitters(200.0, &nu, 42).unwrap();
        let b = sample_transmitters(200.0, &nu, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_transmitters(200.0, &nu, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_poisson_mean() {
        let nu = unit_driver(1.0);
        let lambda = 1000.0;
        let reps = 200;
        let mean = (0..reps)
            .map(|r| {
                sample_transmitters(lambda, &nu, crate::rng::derive(5, &[tag::REPLICA, r]))
                    .unwrap()
                    .len() as f64
            })
            .sum::<f64>()
            / reps as f64;
        // 3 sigma of the replica mean
        let tol = 3.0 * (lambda / reps as f64).sqrt();
        assert!((mean - lambda).abs() < tol, "mean {mean} vs {lambda}");
    }

    #[test]
    fn single_transmitter_is_never_frustrated() {
        let atoms = vec![MarkedAtom { time: 0.5, mark: 0.1, position: vec![0.5], target_cell: None }];
        let pts = MarkedPointSet::new(atoms, 1.0, 1.0).unwrap();
        let part = Partition::single_cell(Window::unit_interval());
        let kernel = KernelTable::constant(&part, &part, 1.0).unwrap();
        let relays = RelayConfig::new(vec![vec![0.3]], 1.0).unwrap();
        let trace = simulate_relay_choice(&pts, &relays, &kernel, 9).unwrap();
        assert_eq!(trace.frustrated_total(), 0.0);
    }

    #[test]
    fn one_relay_frustrates_all_but_first() {
        let n = 17;
        let atoms: Vec<MarkedAtom> = (0..n)
            .map(|i| MarkedAtom {
                time: (i + 1) as f64 / (n + 1) as f64,
                mark: 0.5,
                position: vec![0.5],
                target_cell: None,
            })
            .collect();
        let pts = MarkedPointSet::new(atoms, 1.0, 1.0).unwrap();
        let part = Partition::single_cell(Window::unit_interval());
        let kernel = KernelTable::constant(&part, &part, 1.0).unwrap();
        let relays = RelayConfig::new(vec![vec![0.3]], 1.0).unwrap();
        let trace = simulate_relay_choice(&pts, &relays, &kernel, 9).unwrap();
        assert_eq!(trace.frustrated_total(), (n - 1) as f64);
        assert!(trace.conservation_slack(1.0) < 1e-12);
    }

    #[test]
    fn zero_preference_is_rejected() {
        let atoms = vec![MarkedAtom { time: 0.5, mark: 0.1, position: vec![0.5], target_cell: None }];
        let pts = MarkedPointSet::new(atoms, 1.0, 1.0).unwrap();
        let part = Partition::single_cell(Window::unit_interval());
        let kernel = KernelTable::constant(&part, &part, 0.0).unwrap();
        let relays = RelayConfig::new(vec![vec![0.3]], 1.0).unwrap();
        assert!(simulate_relay_choice(&pts, &relays, &kernel, 9).is_err());
    }

    #[test]
    fn threshold_single_cell_examples() {
        let part = Partition::single_cell(Window::unit_interval());
        // one transmitter, relay mass 1: always succeeds
        let atoms = vec![MarkedAtom { time: 0.5, mark: 0.0, position: vec![0.5], target_cell: Some(0) }];
        let pts = MarkedPointSet::new(atoms, 1.0, 1.0).unwrap();
        let trace = simulate_threshold(&pts, &[1.0], &part).unwrap();
        assert_eq!(trace.frustrated_total(), 0.0);

        // zero relay mass: everyone is frustrated
        let atoms: Vec<MarkedAtom> = (0..4)
            .map(|i| MarkedAtom {
                time: 0.2 * (i + 1) as f64,
                mark: 0.9,
                position: vec![0.5],
                target_cell: Some(0),
            })
            .collect();
        let pts = MarkedPointSet::new(atoms, 1.0, 1.0).unwrap();
        let trace = simulate_threshold(&pts, &[0.0], &part).unwrap();
        assert_eq!(trace.frustrated_total(), 4.0);

        // missing target cell is an error
        let atoms = vec![MarkedAtom { time: 0.5, mark: 0.0, position: vec![0.5], target_cell: None }];
        let pts = MarkedPointSet::new(atoms, 1.0, 1.0).unwrap();
        assert!(simulate_threshold(&pts, &[1.0], &part).is_err());
    }

    #[test]
    fn replay_assigned_counts_late_collisions() {
        // two atoms on the same relay: the later one is frustrated
        let atoms = vec![
            AssignedAtom { time: 0.2, cell: 0, relay: 0 },
            AssignedAtom { time: 0.6, cell: 0, relay: 0 },
            AssignedAtom { time: 0.7, cell: 0, relay: 1 },
        ];
        let gamma = replay_assigned(&atoms, 1, 2, 1.0, 1.0).unwrap();
        assert_eq!(gamma.total_at(1.0), 1.0);
        assert_eq!(gamma.total_at(0.5), 0.0);
    }

    #[test]
    fn coupling_identities() {
        let part = partition_window(&Window::unit_interval(), 0.25).unwrap();
        let f = KernelTable::from_fn(&part, &part, |x, y| 0.5 + 0.4 * x[0] * y[0]).unwrap();
        let g = KernelTable::from_fn(&part, &part, |x, y| 0.3 + 0.2 * (x[0] + y[0])).unwrap();
        let base = CouplingBase {
            lambda: 50.0,
            t_f: 1.0,
            x_mass: vec![0.25; 4],
            y_mass: vec![0.25; 4],
            level_cap: 1.0,
        };
        for rep in 0..20 {
            let (zf, zg, tv) = coupled_poisson(&f, &g, &base, 100 + rep).unwrap();
            let direct = total_variation_atomic(&zf, &zg).unwrap();
            assert_eq!(tv, direct, "band count must equal the measure distance");
        }
        // f = g: identical projections
        let (zf, zg, tv) = coupled_poisson(&f, &f, &base, 77).unwrap();
        assert_eq!(tv, 0.0);
        assert_eq!(zf, zg);
        // cap below the supremum is rejected
        let low = CouplingBase { level_cap: 0.1, ..base };
        assert!(coupled_poisson(&f, &g, &low, 1).is_err());
    }

    #[test]
    fn coupling_dominated_kernel_is_subset() {
        let part = partition_window(&Window::unit_interval(), 0.5).unwrap();
        let f = KernelTable::constant(&part, &part, 0.8).unwrap();
        let g = KernelTable::constant(&part, &part, 0.5).unwrap();
        let base = CouplingBase {
            lambda: 30.0,
            t_f: 1.0,
            x_mass: vec![0.5, 0.5],
            y_mass: vec![0.5, 0.5],
            level_cap: 1.0,
        };
        let (zf, zg, tv) = coupled_poisson(&f, &g, &base, 5).unwrap();
        assert!(zg.len() <= zf.len());
        assert_eq!(tv, (zf.len() - zg.len()) as f64 / 30.0);
    }
}
