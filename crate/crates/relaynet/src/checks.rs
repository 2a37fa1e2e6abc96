//! Reusable inequality campaigns for the quantitative lemmas.
//!
//! Each campaign draws randomized instances, evaluates one inequality
//! pathwise, and reports the worst slack (`LHS - RHS`; positive means a
//! violation). The test suites run them at the calibrated sample counts and
//! the CLI exposes them through `check-lemmas`.

use crate::error::Result;
use crate::fluid::{
    band_between, euler_two_step, euler_two_step_points, exact_busy_empirical, solve_fixed_point_on,
    PicardInit,
};
use crate::measure::{
    sup_norm, GriddedMeasure, MarkedAtom, MarkedPointSet, Partition, Window,
};
use crate::rng::{derive, stream, tag};
use crate::sim::{replay_assigned, sample_transmitters, simulate_threshold, AssignedAtom};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Outcome of one campaign; `max_slack` is the worst `LHS - RHS`.
#[derive(Debug, Clone, Serialize)]
pub struct CampaignResult {
    pub lemma_id: String,
    pub instances: usize,
    pub violations: usize,
    pub max_slack: f64,
}

impl CampaignResult {
    fn from_slacks(lemma_id: &str, slacks: &[f64], tol: f64) -> Self {
        CampaignResult {
            lemma_id: lemma_id.to_string(),
            instances: slacks.len(),
            violations: slacks.iter().filter(|&&s| s > tol).count(),
            max_slack: slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Random product-form driver on the unit interval with horizon 1.
pub fn random_gridded_driver(seed: u64, key: u64) -> GriddedMeasure {
    let mut rng = stream(seed, &[tag::DRIVER, key]);
    let nt = rng.random_range(2..=8usize);
    let nu = rng.random_range(2..=6usize);
    let part = Partition::single_cell(Window::unit_interval());
    let total: f64 = 0.3 + 1.2 * rng.random::<f64>();
    let mut mass: Vec<f64> = (0..nt * nu).map(|_| rng.random::<f64>()).collect();
    let s: f64 = mass.iter().sum();
    for m in &mut mass {
        *m *= total / s;
    }
    let time_grid = (0..=nt).map(|k| k as f64 / nt as f64).collect();
    let choice_grid = (0..=nu).map(|k| k as f64 / nu as f64).collect();
    GriddedMeasure::new(time_grid, choice_grid, part, mass).unwrap()
}

/// Random empirical driver: marks i.i.d. uniform, times i.i.d. uniform.
pub fn random_empirical_driver(seed: u64, key: u64, lambda: f64) -> MarkedPointSet {
    let mut rng = stream(seed, &[tag::DRIVER, key, 1]);
    let n = rng.random_range(10..=80usize);
    let atoms = (0..n)
        .map(|_| MarkedAtom {
            time: rng.random::<f64>(),
            mark: rng.random::<f64>(),
            position: vec![rng.random::<f64>()],
            target_cell: Some(0),
        })
        .collect();
    MarkedPointSet::new(atoms, 1.0 / lambda, 1.0).unwrap()
}

fn euler_block_choices(rng: &mut impl Rng) -> f64 {
    // divisors of 1.0 keeping the horizon an integer number of blocks
    let choices = [0.05, 0.1, 0.125, 0.2, 0.25];
    choices[rng.random_range(0..choices.len())]
}

/// Campaign outcome for the block scheme: dominance and the two-block-mass
/// error bound, over gridded and empirical drivers.
#[derive(Debug, Clone)]
pub struct EulerCampaign {
    pub dominance: CampaignResult,
    pub error_bound: CampaignResult,
}

/// Checks `lower <= beta` and `sup |lower - beta| <= 2 max block mass` on
/// random gridded drivers.
pub fn euler_bounds_gridded(seed: u64, instances: usize) -> Result<EulerCampaign> {
    let results: Vec<(f64, f64)> = (0..instances as u64)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64)> {
            let nu = random_gridded_driver(seed, k);
            let delta = euler_block_choices(&mut stream(seed, &[tag::DRIVER, k, 2]));
            let pair = euler_two_step(&nu, delta)?;
            let (beta, _) = solve_fixed_point_on(&nu, 1e-9, 800, PicardInit::Zero)?;
            let n_blocks = (1.0 / delta).round() as usize;
            let max_block = (1..=n_blocks)
                .map(|n| nu.band_mass((n - 1) as f64 * delta, n as f64 * delta, 0.0, None))
                .fold(0.0, f64::max);
            let mut dom_slack = f64::NEG_INFINITY;
            let mut gap: f64 = 0.0;
            for &t in pair.lower.times() {
                let lo = pair.lower.total_at(t);
                let b = beta.at(t);
                dom_slack = dom_slack.max(lo - b);
                gap = gap.max((lo - b).abs());
            }
            Ok((dom_slack, gap - 2.0 * max_block))
        })
        .collect::<Result<_>>()?;
    let dom: Vec<f64> = results.iter().map(|r| r.0).collect();
    let err: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(EulerCampaign {
        dominance: CampaignResult::from_slacks("euler-dominance-gridded", &dom, 1e-6),
        error_bound: CampaignResult::from_slacks("euler-error-gridded", &err, 1e-6),
    })
}

/// Same bounds on empirical drivers, where both sides are exact.
pub fn euler_bounds_empirical(seed: u64, instances: usize) -> Result<EulerCampaign> {
    let results: Vec<(f64, f64)> = (0..instances as u64)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64)> {
            let points = random_empirical_driver(seed, k, 40.0);
            let delta = euler_block_choices(&mut stream(seed, &[tag::DRIVER, k, 3]));
            let pair = euler_two_step_points(&points, delta)?;
            let busy = exact_busy_empirical(&points, 1.0)?;
            let w = points.weight();
            let n_blocks = (1.0 / delta).round() as usize;
            let mut block_counts = vec![0usize; n_blocks];
            for a in points.atoms() {
                let b = ((a.time / delta).ceil() as usize).clamp(1, n_blocks);
                block_counts[b - 1] += 1;
            }
            let max_block = w * block_counts.iter().copied().max().unwrap_or(0) as f64;
            let mut dom_slack = f64::NEG_INFINITY;
            let mut gap: f64 = 0.0;
            let mut probe: Vec<f64> = points.atoms().iter().map(|a| a.time).collect();
            probe.extend((0..=n_blocks).map(|n| n as f64 * delta));
            for &t in &probe {
                let lo = pair.lower.total_at(t);
                let b = busy.total_at(t);
                dom_slack = dom_slack.max(lo - b);
                gap = gap.max((lo - b).abs());
            }
            Ok((dom_slack, gap - 2.0 * max_block))
        })
        .collect::<Result<_>>()?;
    let dom: Vec<f64> = results.iter().map(|r| r.0).collect();
    let err: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(EulerCampaign {
        dominance: CampaignResult::from_slacks("euler-dominance-empirical", &dom, 1e-12),
        error_bound: CampaignResult::from_slacks("euler-error-empirical", &err, 1e-12),
    })
}

/// Measure-valued approximation bound: `sup |lower - beta|` is controlled by
/// the driver mass of the band between the solution and the overcount.
pub fn norm_approx_band_gridded(seed: u64, instances: usize) -> Result<CampaignResult> {
    let slacks: Vec<f64> = (0..instances as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let nu = random_gridded_driver(seed, 1000 + k);
            let delta = euler_block_choices(&mut stream(seed, &[tag::DRIVER, k, 4]));
            let pair = euler_two_step(&nu, delta)?;
            let (beta, _) = solve_fixed_point_on(&nu, 1e-9, 800, PicardInit::Zero)?;
            let rhs = band_between(&nu, &beta, &pair.upper)?;
            let mut lhs: f64 = 0.0;
            for &t in pair.lower.times() {
                lhs = lhs.max((pair.lower.total_at(t) - beta.at(t)).abs());
            }
            Ok(lhs - rhs)
        })
        .collect::<Result<_>>()?;
    Ok(CampaignResult::from_slacks("norm-approx-band-gridded", &slacks, 1e-6))
}

/// Empirical version of the band bound, with exact jump processes and the
/// band mass counted atom by atom.
pub fn norm_approx_band_empirical(seed: u64, instances: usize) -> Result<CampaignResult> {
    let slacks: Vec<f64> = (0..instances as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let points = random_empirical_driver(seed, 2000 + k, 60.0);
            let delta = euler_block_choices(&mut stream(seed, &[tag::DRIVER, k, 5]));
            let pair = euler_two_step_points(&points, delta)?;
            let busy = exact_busy_empirical(&points, 1.0)?;
            let w = points.weight();
            let mut rhs = 0.0;
            for a in points.atoms() {
                let b_left = busy.total_before(a.time);
                let up_left = pair.upper.at(a.time);
                let (lo, hi) = (b_left.min(up_left), b_left.max(up_left));
                if a.mark >= lo && a.mark <= hi {
                    rhs += w;
                }
            }
            let mut lhs: f64 = 0.0;
            let mut probe: Vec<f64> = points.atoms().iter().map(|a| a.time).collect();
            probe.push(1.0);
            for &t in &probe {
                lhs = lhs.max((pair.lower.total_at(t) - busy.total_at(t)).abs());
            }
            Ok(lhs - rhs)
        })
        .collect::<Result<_>>()?;
    Ok(CampaignResult::from_slacks("norm-approx-band-empirical", &slacks, 1e-12))
}

/// Relay-count dominance: with shared marks and `s <= r`,
/// `(s/r)(B^r - 1/lambda) <= B^s <= B^r` pathwise.
pub fn relay_dominance(seed: u64, runs: usize, ratios: &[f64]) -> Result<CampaignResult> {
    let lambda = 50.0;
    let mut slacks = Vec::with_capacity(runs * ratios.len());
    for k in 0..runs as u64 {
        let points = random_empirical_driver(seed, 3000 + k, lambda);
        let upper = exact_busy_empirical(&points, 1.0)?;
        for &s in ratios {
            // r = 1, so the ratio s/r is s itself
            let lower = exact_busy_empirical(&points, s)?;
            let mut worst = f64::NEG_INFINITY;
            for a in points.atoms() {
                let br = upper.total_at(a.time);
                let bs = lower.total_at(a.time);
                worst = worst.max(bs - br);
                worst = worst.max(s * (br - 1.0 / lambda) - bs);
            }
            slacks.push(worst);
        }
    }
    Ok(CampaignResult::from_slacks("relay-dominance", &slacks, 1e-12))
}

/// 2-Lipschitz contraction under single-atom edits of assigned counting
/// measures: `sup_t TV(gamma, gamma') <= 2 ||nu - nu'||`.
pub fn lipschitz_edits(seed: u64, edits: usize) -> Result<CampaignResult> {
    let slacks: Vec<f64> = (0..edits as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = stream(seed, &[tag::DRIVER, 4000 + k]);
            let n_cells = rng.random_range(1..=4usize);
            let n_relays = rng.random_range(1..=12usize);
            let n = rng.random_range(5..=50usize);
            let atoms: Vec<AssignedAtom> = (0..n)
                .map(|_| AssignedAtom {
                    time: rng.random::<f64>(),
                    cell: rng.random_range(0..n_cells),
                    relay: rng.random_range(0..n_relays),
                })
                .collect();
            let gamma = replay_assigned(&atoms, n_cells, n_relays, 1.0, 1.0)?;
            // remove one atom (or add one when the set is small)
            let mut edited = atoms.clone();
            if rng.random::<bool>() || edited.len() <= 1 {
                edited.push(AssignedAtom {
                    time: rng.random::<f64>(),
                    cell: rng.random_range(0..n_cells),
                    relay: rng.random_range(0..n_relays),
                });
            } else {
                let i = rng.random_range(0..edited.len());
                edited.remove(i);
            }
            let gamma2 = replay_assigned(&edited, n_cells, n_relays, 1.0, 1.0)?;
            let dist = sup_norm(&gamma, &gamma2)?;
            Ok(dist - 2.0)
        })
        .collect::<Result<_>>()?;
    Ok(CampaignResult::from_slacks("two-lipschitz-edit", &slacks, 1e-12))
}

/// Stability in the driver: `sup_t |beta(nu) - beta(nu')| <= ||nu - nu'||`
/// for gridded drivers differing on random boxes.
pub fn driver_stability(seed: u64, pairs: usize) -> Result<CampaignResult> {
    let slacks: Vec<f64> = (0..pairs as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let nu = random_gridded_driver(seed, 5000 + k);
            let mut rng = stream(seed, &[tag::DRIVER, 6000 + k]);
            let mut other = nu.clone();
            let n_edits = rng.random_range(1..=4usize);
            for _ in 0..n_edits {
                let ti = rng.random_range(0..nu.n_time());
                let ui = rng.random_range(0..nu.n_choice());
                let m = other.box_mass(ti, ui, 0);
                let factor = 0.5 + rng.random::<f64>();
                other = other.with_box_mass(ti, ui, 0, m * factor)?;
            }
            // total variation over the grid boxes
            let mut pos = 0.0;
            let mut neg = 0.0;
            for ti in 0..nu.n_time() {
                for ui in 0..nu.n_choice() {
                    let d = nu.box_mass(ti, ui, 0) - other.box_mass(ti, ui, 0);
                    if d > 0.0 {
                        pos += d;
                    } else {
                        neg -= d;
                    }
                }
            }
            let tv = pos.max(neg);
            let (b1, _) = solve_fixed_point_on(&nu, 1e-9, 800, PicardInit::Zero)?;
            let (b2, _) = solve_fixed_point_on(&other, 1e-9, 800, PicardInit::Zero)?;
            Ok(b1.sup_distance(&b2) - tv)
        })
        .collect::<Result<_>>()?;
    Ok(CampaignResult::from_slacks("driver-stability", &slacks, 1e-6))
}

/// Near-threshold counts for the previsible bound: per replica, the number
/// of arrivals whose mark lands within `eps` of the running busy mass.
pub fn near_threshold_counts(seed: u64, replicas: usize, lambda: f64, eps: f64) -> Result<Vec<u64>> {
    let part = Partition::single_cell(Window::unit_interval());
    let mu_t = GriddedMeasure::uniform(1.0, 1.0, 1, 1, part)?;
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<u64> {
            let pts = sample_transmitters(lambda, &mu_t, derive(seed, &[tag::REPLICA, r]))?;
            let mut busy = 0.0;
            let mut count = 0u64;
            for a in pts.atoms() {
                if (a.mark - busy).abs() <= eps {
                    count += 1;
                }
                if a.mark >= busy {
                    busy += pts.weight();
                }
            }
            Ok(count)
        })
        .collect()
}

/// Frustration counts on the three-transmitter / two-relay instance, for
/// both simulators; returns per-category counts indexed by the number of
/// frustrated transmitters (0..=3).
pub fn mark_equivalence_counts(seed: u64, replicas: usize) -> Result<([u64; 4], [u64; 4])> {
    use crate::sim::{simulate_relay_choice, RelayConfig};
    use crate::spatial::KernelTable;
    let part = Partition::single_cell(Window::unit_interval());
    let kernel = KernelTable::constant(&part, &part, 1.0)?;
    let relays = RelayConfig::new(vec![vec![0.25], vec![0.75]], 1.0)?;
    let times = [0.25, 0.5, 0.75];

    let fold = |a: [u64; 4], b: [u64; 4]| {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
    };
    let pair = (0..replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<([u64; 4], [u64; 4])> {
            let seed_r = derive(seed, &[tag::REPLICA, r]);
            // explicit relay choice; marks are irrelevant there
            let atoms: Vec<MarkedAtom> = times
                .iter()
                .map(|&t| MarkedAtom { time: t, mark: 0.0, position: vec![0.5], target_cell: None })
                .collect();
            let pts = MarkedPointSet::new(atoms, 1.0, 1.0)?;
            let trace = simulate_relay_choice(&pts, &relays, &kernel, seed_r)?;
            let mut a = [0u64; 4];
            a[trace.frustrated_total() as usize] += 1;

            // threshold dynamics with fresh uniform marks, relay mass 2
            let mut rng = stream(seed_r, &[tag::ATOM, 99]);
            let atoms: Vec<MarkedAtom> = times
                .iter()
                .map(|&t| MarkedAtom {
                    time: t,
                    mark: rng.random::<f64>(),
                    position: vec![0.5],
                    target_cell: Some(0),
                })
                .collect();
            let pts = MarkedPointSet::new(atoms, 1.0, 1.0)?;
            let trace = simulate_threshold(&pts, &[2.0], &part)?;
            let mut b = [0u64; 4];
            b[trace.frustrated_total() as usize] += 1;
            Ok((a, b))
        })
        .try_reduce(
            || ([0u64; 4], [0u64; 4]),
            |x, y| Ok((fold(x.0, y.0), fold(x.1, y.1))),
        )?;
    Ok(pair)
}

/// Exact localization identity: running the threshold dynamics per relay
/// cell and summing equals the single global run, pathwise.
pub fn localization_identity(seed: u64, runs: usize) -> Result<CampaignResult> {
    let slacks: Vec<f64> = (0..runs as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = stream(seed, &[tag::DRIVER, 7000 + k]);
            let n_cells = rng.random_range(2..=4usize);
            let window = Window::unit_interval();
            let part = Partition::from_cubes(window.clone(), 1.0 / n_cells as f64)?;
            let lambda = 30.0;
            let nu_r: Vec<f64> = (0..n_cells).map(|_| 0.2 + rng.random::<f64>()).collect();
            let per_cell: Vec<MarkedPointSet> = (0..n_cells)
                .map(|_| {
                    let n = rng.random_range(5..=30usize);
                    let atoms = (0..n)
                        .map(|_| MarkedAtom {
                            time: rng.random::<f64>(),
                            mark: rng.random::<f64>(),
                            position: vec![rng.random::<f64>()],
                            target_cell: None,
                        })
                        .collect();
                    MarkedPointSet::new(atoms, 1.0 / lambda, 1.0).unwrap()
                })
                .collect();
            let merged = crate::spatial::augment_empirical(&per_cell, &nu_r)?;
            let global = simulate_threshold(&merged, &nu_r, &part)?;

            // per-cell runs on the same marks, summed
            let single = Partition::single_cell(window);
            let mut worst: f64 = 0.0;
            let mut per_busy = Vec::new();
            for (i, set) in per_cell.iter().enumerate() {
                let mut tagged_atoms = set.atoms().to_vec();
                for a in &mut tagged_atoms {
                    a.target_cell = Some(0);
                }
                let tagged = MarkedPointSet::new(tagged_atoms, set.weight(), set.t_f())?;
                let trace = simulate_threshold(&tagged, &[nu_r[i]], &single)?;
                per_busy.push(trace);
            }
            // compare the total busy and frustrated masses at every event time
            let mut probes: Vec<f64> = merged.atoms().iter().map(|a| a.time).collect();
            probes.push(1.0);
            for &t in &probes {
                let global_busy = global.busy.total_at(t);
                let global_frus = global.frustrated.total_at(t);
                let sum_busy: f64 = per_busy.iter().map(|tr| tr.busy.total_at(t)).sum();
                let sum_frus: f64 = per_busy.iter().map(|tr| tr.frustrated.total_at(t)).sum();
                worst = worst.max((global_busy - sum_busy).abs());
                worst = worst.max((global_frus - sum_frus).abs());
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(CampaignResult::from_slacks("localization-identity", &slacks, 1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_campaigns_pass_at_small_counts() {
        let g = euler_bounds_gridded(21, 20).unwrap();
        assert!(g.dominance.passed(), "{:?}", g.dominance);
        assert!(g.error_bound.passed(), "{:?}", g.error_bound);
        let e = euler_bounds_empirical(22, 20).unwrap();
        assert!(e.dominance.passed(), "{:?}", e.dominance);
        assert!(e.error_bound.passed(), "{:?}", e.error_bound);
    }

    #[test]
    fn band_bounds_pass_at_small_counts() {
        let g = norm_approx_band_gridded(23, 15).unwrap();
        assert!(g.passed(), "{g:?}");
        let e = norm_approx_band_empirical(24, 15).unwrap();
        assert!(e.passed(), "{e:?}");
    }

    #[test]
    fn pathwise_lemmas_pass_at_small_counts() {
        let r = relay_dominance(25, 50, &[0.5, 0.9]).unwrap();
        assert!(r.passed(), "{r:?}");
        let l = lipschitz_edits(26, 50).unwrap();
        assert!(l.passed(), "{l:?}");
        let s = driver_stability(27, 15).unwrap();
        assert!(s.passed(), "{s:?}");
        let loc = localization_identity(28, 20).unwrap();
        assert!(loc.passed(), "{loc:?}");
    }
}
