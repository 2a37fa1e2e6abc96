//! Finite measures on partitioned windows, marked point configurations,
//! piecewise-constant measure paths, and the metrics between them.
//!
//! Measures are carried on finite partitions, so "supremum over measurable
//! sets" is computed exactly from positive and negative parts. All types are
//! immutable after construction; every operation is a pure function.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Compact axis-aligned window in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    bounds: Vec<(f64, f64)>,
}

impl Window {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::domain("window must have at least one dimension"));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::domain("window bounds must be finite"));
            }
            if hi <= lo {
                return Err(Error::domain("window must have nonempty interior"));
            }
        }
        Ok(Window { bounds })
    }

    pub fn unit_interval() -> Self {
        Window::new(vec![(0.0, 1.0)]).unwrap()
    }

    pub fn unit_square() -> Self {
        Window::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|&(lo, hi)| hi - lo).product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dimension()
            && point
                .iter()
                .zip(&self.bounds)
                .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }
}

/// One box of a partition, clipped to the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cell {
    pub fn centroid(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(&a, &b)| b - a).product()
    }
}

/// Decomposition of a window into cubes of side `delta` (clipped at the
/// upper boundary), with an optional per-cell relay mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    window: Window,
    delta: f64,
    counts: Vec<usize>,
    cells: Vec<Cell>,
    relay_mass: Vec<f64>,
}

impl Partition {
    pub(crate) fn from_cubes(window: Window, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::domain("cell side must be positive and finite"));
        }
        let dim = window.dimension();
        let mut counts = Vec::with_capacity(dim);
        for &(lo, hi) in window.bounds() {
            let extent = hi - lo;
            // Number of cubes covering the axis; an exact multiple does not
            // produce a trailing sliver.
            let n = (extent / delta - 1e-12).floor() as usize + 1;
            counts.push(n);
        }
        let total: usize = counts.iter().product();
        let mut cells = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut lo = Vec::with_capacity(dim);
            let mut hi = Vec::with_capacity(dim);
            for (d, &(wlo, whi)) in window.bounds().iter().enumerate() {
                let a = wlo + idx[d] as f64 * delta;
                let b = (a + delta).min(whi);
                lo.push(a);
                hi.push(b);
            }
            cells.push(Cell { lo, hi });
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let relay_mass = vec![0.0; cells.len()];
        Ok(Partition {
            window,
            delta,
            counts,
            cells,
            relay_mass,
        })
    }

    /// The whole window as a single cell.
    pub fn single_cell(window: Window) -> Self {
        let delta = window
            .bounds()
            .iter()
            .map(|&(lo, hi)| hi - lo)
            .fold(0.0, f64::max);
        Partition::from_cubes(window, delta).unwrap()
    }

    pub fn with_relay_mass(mut self, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != self.cells.len() {
            return Err(Error::mismatch(format!(
                "relay mass has {} entries for {} cells",
                mass.len(),
                self.cells.len()
            )));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::domain("relay mass must be nonnegative and finite"));
        }
        self.relay_mass = mass;
        Ok(self)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn relay_mass(&self) -> &[f64] {
        &self.relay_mass
    }

    pub fn total_relay_mass(&self) -> f64 {
        self.relay_mass.iter().sum()
    }

    pub fn centroids(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(Cell::centroid).collect()
    }

    /// Index of the cell containing `point`, if inside the window.
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        if !self.window.contains(point) {
            return None;
        }
        let mut index = 0usize;
        for (d, (&x, &(lo, _))) in point.iter().zip(self.window.bounds()).enumerate() {
            let mut k = ((x - lo) / self.delta).floor() as usize;
            if k >= self.counts[d] {
                k = self.counts[d] - 1;
            }
            index = index * self.counts[d] + k;
        }
        Some(index)
    }
}

/// One weighted atom of an empirical transmitter configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedAtom {
    /// Request time in `[0, t_f]`.
    pub time: f64,
    /// Choice mark in `[0, 1]`.
    pub mark: f64,
    /// Transmitter location.
    pub position: Vec<f64>,
    /// Relay-target cell, when the configuration carries one.
    pub target_cell: Option<usize>,
}

/// Finite weighted atomic measure on `[0, t_f] x [0, 1] x W`, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPointSet {
    atoms: Vec<MarkedAtom>,
    weight: f64,
    total_time: f64,
}

impl MarkedPointSet {
    pub fn new(mut atoms: Vec<MarkedAtom>, weight: f64, total_time: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::domain("atom weight must be positive"));
        }
        if !(total_time > 0.0) || !total_time.is_finite() {
            return Err(Error::domain("time horizon must be positive"));
        }
        for a in &atoms {
            if !(0.0..=total_time).contains(&a.time) {
                return Err(Error::domain("atom time outside [0, t_f]"));
            }
            if !(0.0..=1.0).contains(&a.mark) {
                return Err(Error::domain("atom mark outside [0, 1]"));
            }
        }
        atoms.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        Ok(MarkedPointSet {
            atoms,
            weight,
            total_time,
        })
    }

    pub fn empty(weight: f64, total_time: f64) -> Self {
        MarkedPointSet::new(Vec::new(), weight, total_time).unwrap()
    }

    pub fn atoms(&self) -> &[MarkedAtom] {
        &self.atoms
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn t_f(&self) -> f64 {
        self.total_time
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weight * self.atoms.len() as f64
    }

    /// Mass of atoms in `(a, b] x [u_lo, 1] x W`.
    pub fn band_mass(&self, a: f64, b: f64, u_lo: f64) -> f64 {
        self.weight
            * self
                .atoms
                .iter()
                .filter(|at| at.time > a && at.time <= b && at.mark >= u_lo)
                .count() as f64
    }
}

/// Product-density measure on a time x choice x space grid.
///
/// The mass in each box is spread uniformly, so integrals against
/// piecewise-linear thresholds are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedMeasure {
    time_grid: Vec<f64>,
    choice_grid: Vec<f64>,
    partition: Partition,
    mass: Vec<f64>,
}

fn check_grid(grid: &[f64], lo: f64, hi: f64, what: &str) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::domain(format!("{what} grid needs at least 2 knots")));
    }
    if (grid[0] - lo).abs() > 1e-12 || (grid[grid.len() - 1] - hi).abs() > 1e-12 {
        return Err(Error::domain(format!("{what} grid must span [{lo}, {hi}]")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain(format!("{what} grid must be increasing")));
    }
    Ok(())
}

impl GriddedMeasure {
    pub fn new(
        time_grid: Vec<f64>,
        choice_grid: Vec<f64>,
        partition: Partition,
        mass: Vec<f64>,
    ) -> Result<Self> {
        let t_f = *time_grid.last().ok_or_else(|| Error::domain("empty time grid"))?;
        check_grid(&time_grid, 0.0, t_f, "time")?;
        check_grid(&choice_grid, 0.0, 1.0, "choice")?;
        let expect = (time_grid.len() - 1) * (choice_grid.len() - 1) * partition.len();
        if mass.len() != expect {
            return Err(Error::mismatch(format!(
                "mass vector has {} entries, grid implies {}",
                mass.len(),
                expect
            )));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::domain("cell masses must be nonnegative and finite"));
        }
        Ok(GriddedMeasure {
            time_grid,
            choice_grid,
            partition,
            mass,
        })
    }

    /// Uniform product measure of the given total mass: time uniform on
    /// `[0, t_f]`, choice uniform on `[0, 1]`, space uniform over cells by
    /// volume.
    pub fn uniform(t_f: f64, total_mass: f64, nt: usize, nu: usize, partition: Partition) -> Result<Self> {
        if !(t_f > 0.0) {
            return Err(Error::domain("time horizon must be positive"));
        }
        if !(total_mass >= 0.0) {
            return Err(Error::domain("total mass must be nonnegative"));
        }
        let time_grid: Vec<f64> = (0..=nt).map(|k| t_f * k as f64 / nt as f64).collect();
        let choice_grid: Vec<f64> = (0..=nu).map(|k| k as f64 / nu as f64).collect();
        let vol: f64 = partition.cells().iter().map(Cell::volume).sum();
        let nc = partition.len();
        let mut mass = Vec::with_capacity(nt * nu * nc);
        for _ in 0..nt {
            for _ in 0..nu {
                for c in partition.cells() {
                    mass.push(total_mass / (nt * nu) as f64 * c.volume() / vol);
                }
            }
        }
        GriddedMeasure::new(time_grid, choice_grid, partition, mass)
    }

    /// Builds a measure from a density over (time, choice, space-cell),
    /// midpoint-evaluated per box.
    pub fn from_density<F>(
        time_grid: Vec<f64>,
        choice_grid: Vec<f64>,
        partition: Partition,
        density: F,
    ) -> Result<Self>
    where
        F: Fn(f64, f64, &Cell) -> f64,
    {
        let nt = time_grid.len() - 1;
        let nu = choice_grid.len() - 1;
        let mut mass = Vec::with_capacity(nt * nu * partition.len());
        for ti in 0..nt {
            let tm = 0.5 * (time_grid[ti] + time_grid[ti + 1]);
            let dt = time_grid[ti + 1] - time_grid[ti];
            for ui in 0..nu {
                let um = 0.5 * (choice_grid[ui] + choice_grid[ui + 1]);
                let du = choice_grid[ui + 1] - choice_grid[ui];
                for cell in partition.cells() {
                    let d = density(tm, um, cell);
                    mass.push(d * dt * du * cell.volume());
                }
            }
        }
        GriddedMeasure::new(time_grid, choice_grid, partition, mass)
    }

    pub fn t_f(&self) -> f64 {
        *self.time_grid.last().unwrap()
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn choice_grid(&self) -> &[f64] {
        &self.choice_grid
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn n_time(&self) -> usize {
        self.time_grid.len() - 1
    }

    pub fn n_choice(&self) -> usize {
        self.choice_grid.len() - 1
    }

    pub fn n_cells(&self) -> usize {
        self.partition.len()
    }

    #[inline]
    pub fn box_mass(&self, ti: usize, ui: usize, ci: usize) -> f64 {
        self.mass[(ti * self.n_choice() + ui) * self.n_cells() + ci]
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) || !factor.is_finite() {
            return Err(Error::domain("scale factor must be nonnegative"));
        }
        GriddedMeasure::new(
            self.time_grid.clone(),
            self.choice_grid.clone(),
            self.partition.clone(),
            self.mass.iter().map(|m| m * factor).collect(),
        )
    }

    pub fn with_box_mass(&self, ti: usize, ui: usize, ci: usize, value: f64) -> Result<Self> {
        let mut mass = self.mass.clone();
        mass[(ti * self.n_choice() + ui) * self.n_cells() + ci] = value;
        GriddedMeasure::new(
            self.time_grid.clone(),
            self.choice_grid.clone(),
            self.partition.clone(),
            mass,
        )
    }

    /// Mass of `(a, b] x [u_lo, 1] x (one cell or all)`, exact for the
    /// piecewise-uniform density.
    pub fn band_mass(&self, a: f64, b: f64, u_lo: f64, cell: Option<usize>) -> f64 {
        if b <= a {
            return 0.0;
        }
        let nu = self.n_choice();
        let nc = self.n_cells();
        let mut total = 0.0;
        for ti in 0..self.n_time() {
            let (t0, t1) = (self.time_grid[ti], self.time_grid[ti + 1]);
            let overlap = (b.min(t1) - a.max(t0)).max(0.0);
            if overlap <= 0.0 {
                continue;
            }
            let tfrac = overlap / (t1 - t0);
            for ui in 0..nu {
                let (u0, u1) = (self.choice_grid[ui], self.choice_grid[ui + 1]);
                let ufrac = if u_lo <= u0 {
                    1.0
                } else if u_lo >= u1 {
                    0.0
                } else {
                    (u1 - u_lo) / (u1 - u0)
                };
                if ufrac == 0.0 {
                    continue;
                }
                match cell {
                    Some(ci) => {
                        total += self.box_mass(ti, ui, ci) * tfrac * ufrac;
                    }
                    None => {
                        for ci in 0..nc {
                            total += self.box_mass(ti, ui, ci) * tfrac * ufrac;
                        }
                    }
                }
            }
        }
        total
    }

    /// Arrival mass `nu([0, t] x [0, 1] x W)`.
    pub fn arrivals_to(&self, t: f64) -> f64 {
        self.band_mass(0.0, t, 0.0, None)
    }

    /// Per-cell arrival masses up to `t`.
    pub fn arrivals_per_cell_to(&self, t: f64) -> Vec<f64> {
        (0..self.n_cells())
            .map(|ci| self.band_mass(0.0, t, 0.0, Some(ci)))
            .collect()
    }

    /// Marginal over choice and space: per-time-cell masses.
    pub fn time_marginal(&self) -> Vec<f64> {
        (0..self.n_time())
            .map(|ti| {
                (0..self.n_choice())
                    .map(|ui| (0..self.n_cells()).map(|ci| self.box_mass(ti, ui, ci)).sum::<f64>())
                    .sum()
            })
            .collect()
    }
}

/// Average over `s in [0,1]` of the fraction of `[u0, u1]` above the linear
/// threshold going from `b0` to `b1`; exact by splitting at the crossings.
pub(crate) fn avg_fraction_above(b0: f64, b1: f64, u0: f64, u1: f64) -> f64 {
    debug_assert!(u1 > u0);
    let frac = |b: f64| ((u1 - b) / (u1 - u0)).clamp(0.0, 1.0);
    if (b1 - b0).abs() < 1e-300 {
        return frac(b0);
    }
    // Positions where the line crosses u0 and u1, kept if inside (0, 1).
    let mut cuts = [0.0f64, 1.0, 1.0, 1.0];
    let mut n = 1;
    for target in [u0, u1] {
        let s = (target - b0) / (b1 - b0);
        if s > 0.0 && s < 1.0 {
            cuts[n] = s;
            n += 1;
        }
    }
    cuts[n] = 1.0;
    n += 1;
    let mut segs: Vec<f64> = cuts[..n].to_vec();
    segs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut acc = 0.0;
    for w in segs.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        if s1 <= s0 {
            continue;
        }
        let f0 = frac(b0 + (b1 - b0) * s0);
        let f1 = frac(b0 + (b1 - b0) * s1);
        acc += 0.5 * (f0 + f1) * (s1 - s0);
    }
    acc
}

/// Cadlag piecewise-constant path of per-cell measures. The value on
/// `[times[i], times[i+1])` is `values[i]`; before the first event the path
/// is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    t_f: f64,
    n_cells: usize,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl StepPath {
    pub fn zero(t_f: f64, n_cells: usize) -> Self {
        StepPath {
            t_f,
            n_cells,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn new(t_f: f64, n_cells: usize, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::mismatch("times and values differ in length"));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("event times must be sorted"));
        }
        if times.iter().any(|&t| t < 0.0 || t > t_f) {
            return Err(Error::domain("event times outside [0, t_f]"));
        }
        for v in &values {
            if v.len() != n_cells {
                return Err(Error::mismatch("value vector length differs from cell count"));
            }
            if v.iter().any(|&m| m < -1e-12 || !m.is_finite()) {
                return Err(Error::domain("per-cell masses must be nonnegative"));
            }
        }
        Ok(StepPath {
            t_f,
            n_cells,
            times,
            values,
        })
    }

    /// Appends an event; ties keep insertion order, so the later push wins
    /// at evaluation.
    pub fn push(&mut self, t: f64, value: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t < last {
                return Err(Error::domain("event times must be pushed in order"));
            }
        }
        if t < 0.0 || t > self.t_f {
            return Err(Error::domain("event time outside [0, t_f]"));
        }
        if value.len() != self.n_cells {
            return Err(Error::mismatch("value vector length differs from cell count"));
        }
        self.times.push(t);
        self.values.push(value);
        Ok(())
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    fn zero_value(&self) -> Vec<f64> {
        vec![0.0; self.n_cells]
    }

    /// Value at `t` (cadlag: last event with time <= t).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.zero_value(),
            k => self.values[k - 1].clone(),
        }
    }

    /// Left limit at `t` (last event with time strictly < t).
    pub fn value_before(&self, t: f64) -> Vec<f64> {
        match self.times.partition_point(|&s| s < t) {
            0 => self.zero_value(),
            k => self.values[k - 1].clone(),
        }
    }

    pub fn total_at(&self, t: f64) -> f64 {
        self.value_at(t).iter().sum()
    }

    pub fn total_before(&self, t: f64) -> f64 {
        self.value_before(t).iter().sum()
    }

    /// True when every cell mass is nondecreasing along events.
    pub fn is_increasing(&self) -> bool {
        let mut prev = self.zero_value();
        for v in &self.values {
            if v.iter().zip(&prev).any(|(&a, &b)| a < b - 1e-12) {
                return false;
            }
            prev = v.clone();
        }
        true
    }
}

/// Total variation `max((m1 - m2)^+ (W), (m1 - m2)^- (W))` of two per-cell
/// measures on a common partition.
pub fn total_variation(m1: &[f64], m2: &[f64]) -> Result<f64> {
    if m1.len() != m2.len() {
        return Err(Error::mismatch(format!(
            "measures live on {} vs {} cells",
            m1.len(),
            m2.len()
        )));
    }
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (&a, &b) in m1.iter().zip(m2) {
        let d = a - b;
        if d > 0.0 {
            pos += d;
        } else {
            neg -= d;
        }
    }
    Ok(pos.max(neg))
}

fn atom_key(a: &MarkedAtom) -> (u64, u64, Vec<u64>, Option<usize>) {
    (
        a.time.to_bits(),
        a.mark.to_bits(),
        a.position.iter().map(|x| x.to_bits()).collect(),
        a.target_cell,
    )
}

/// Total variation of two atomic measures on a common ground set: atoms are
/// matched by exact coordinates. Both measures must carry the same atom
/// weight, so the result `weight * max(surplus, deficit)` is exact.
pub fn total_variation_atomic(m1: &MarkedPointSet, m2: &MarkedPointSet) -> Result<f64> {
    if (m1.weight() - m2.weight()).abs() > 0.0 {
        return Err(Error::mismatch("atomic measures carry different weights"));
    }
    let mut signed: BTreeMap<_, i64> = BTreeMap::new();
    for a in m1.atoms() {
        *signed.entry(atom_key(a)).or_insert(0) += 1;
    }
    for a in m2.atoms() {
        *signed.entry(atom_key(a)).or_insert(0) -= 1;
    }
    let mut pos = 0i64;
    let mut neg = 0i64;
    for (_, d) in signed {
        if d > 0 {
            pos += d;
        } else {
            neg -= d;
        }
    }
    Ok(m1.weight() * pos.max(neg) as f64)
}

/// Supremum over time of the total variation between two paths.
pub fn sup_norm(p1: &StepPath, p2: &StepPath) -> Result<f64> {
    if (p1.t_f() - p2.t_f()).abs() > 1e-12 {
        return Err(Error::mismatch("paths have different time horizons"));
    }
    if p1.n_cells() != p2.n_cells() {
        return Err(Error::mismatch("paths live on different partitions"));
    }
    let mut best = total_variation(&p1.value_at(0.0), &p2.value_at(0.0))?;
    for &t in p1.times().iter().chain(p2.times()) {
        let d = total_variation(&p1.value_at(t), &p2.value_at(t))?;
        if d > best {
            best = d;
        }
    }
    Ok(best)
}

/// Largest shortfall `max_F [m1(F) - m2(F^eps)]` over cell unions `F`,
/// where the halo `F^eps` collects cells whose centroid is within `eps` of
/// some cell of `F`. Computed as a min-cut.
fn max_deficit(m1: &[f64], m2: &[f64], dist: &[Vec<f64>], eps: f64) -> f64 {
    let n = m1.len();
    // Dense max-flow: source -> i (cap m1[i]), i -> j when dist <= eps
    // (unbounded), j -> sink (cap m2[j]).
    let nodes = 2 * n + 2;
    let (src, snk) = (2 * n, 2 * n + 1);
    let mut cap = vec![vec![0.0f64; nodes]; nodes];
    for i in 0..n {
        cap[src][i] = m1[i];
        cap[n + i][snk] = m2[i];
        for j in 0..n {
            if dist[i][j] <= eps {
                cap[i][n + j] = f64::INFINITY;
            }
        }
    }
    let total: f64 = m1.iter().sum();
    let mut flow = 0.0;
    loop {
        // BFS for an augmenting path.
        let mut parent = vec![usize::MAX; nodes];
        parent[src] = src;
        let mut queue = std::collections::VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            for w in 0..nodes {
                if parent[w] == usize::MAX && cap[v][w] > 1e-15 {
                    parent[w] = v;
                    queue.push_back(w);
                }
            }
        }
        if parent[snk] == usize::MAX {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = snk;
        while v != src {
            let u = parent[v];
            bottleneck = bottleneck.min(cap[u][v]);
            v = u;
        }
        let mut v = snk;
        while v != src {
            let u = parent[v];
            cap[u][v] -= bottleneck;
            cap[v][u] += bottleneck;
            v = u;
        }
        flow += bottleneck;
    }
    total - flow
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Prokhorov distance between two per-cell measures, with halos taken over
/// cell centroids. Bisection to absolute tolerance 1e-9.
pub fn prokhorov(m1: &[f64], m2: &[f64], centroids: &[Vec<f64>]) -> Result<f64> {
    if m1.len() != m2.len() || m1.len() != centroids.len() {
        return Err(Error::mismatch("measures and centroids disagree in length"));
    }
    let n = m1.len();
    let tv = total_variation(m1, m2)?;
    if tv == 0.0 {
        return Ok(0.0);
    }
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| euclid(&centroids[i], &centroids[j])).collect())
        .collect();
    let feasible = |eps: f64| -> bool {
        max_deficit(m1, m2, &dist, eps) <= eps && max_deficit(m2, m1, &dist, eps) <= eps
    };
    // Total variation dominates the halo conditions, so tv is feasible.
    let mut hi = tv;
    let mut lo = 0.0;
    if !feasible(hi) {
        // Guard against rounding at the boundary.
        hi = tv * (1.0 + 1e-12) + 1e-15;
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Modulus-of-continuity position states: a realizable boundary position,
/// possibly only as an unattained infimum.
#[derive(Clone, Copy, Debug)]
struct Pos {
    at: f64,
    strict: bool,
}

/// Modulus of continuity `w'_delta`: minimum over time partitions
/// `0 = t_0 < ... < t_k = t_f` with all gaps strictly larger than `delta` of
/// the largest intra-interval Prokhorov diameter, intervals taken half-open
/// `[t_{i-1}, t_i)`.
pub fn modulus_of_continuity(path: &StepPath, delta: f64, partition: &Partition) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::domain("delta must be positive"));
    }
    if delta >= path.t_f() {
        return Err(Error::domain("delta must be smaller than the horizon"));
    }
    if partition.len() != path.n_cells() {
        return Err(Error::mismatch("partition does not match path cells"));
    }
    let centroids = partition.centroids();
    let t_f = path.t_f();

    // Collapse the path to its distinct values: v[0] on [0, e[0]), v[j] on
    // [e[j-1], e[j]). Events at exactly t_f never enter a half-open interval.
    let mut events: Vec<f64> = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![path.value_at(0.0)];
    for (i, &t) in path.times().iter().enumerate() {
        if t <= 0.0 || t >= t_f {
            continue;
        }
        let v = &path.values()[i];
        if v != values.last().unwrap() {
            if events.last().map_or(false, |&e| e == t) {
                *values.last_mut().unwrap() = v.clone();
            } else {
                events.push(t);
                values.push(v.clone());
            }
        }
    }
    let m = events.len();
    if m == 0 {
        return Ok(0.0);
    }

    // Pairwise distances and interval diameters over value indices.
    let mut d = vec![vec![0.0f64; m + 1]; m + 1];
    for i in 0..=m {
        for j in (i + 1)..=m {
            d[i][j] = prokhorov(&values[i], &values[j], &centroids)?;
        }
    }
    let mut diam = vec![vec![0.0f64; m + 1]; m + 1];
    for i in 0..=m {
        for j in (i + 1)..=m {
            diam[i][j] = diam[i][j - 1].max((i..j).map(|k| d[k][j]).fold(0.0, f64::max));
        }
    }

    // Candidate answers are the interval diameters.
    let mut candidates: Vec<f64> = diam.iter().flatten().copied().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    // Cut k = 0..m-1 sits exactly at events[k] and separates value k from
    // value k+1; cut m + j (j = 0..m) sits strictly inside piece j and
    // shares value j with both sides.
    //
    // Feasibility for a target c: can boundaries be placed with all gaps
    // strictly greater than delta so that every interval's value range has
    // diameter <= c? Minimal feasible positions propagate left to right.
    let feasible = |c: f64| -> bool {
        if diam[0][m] <= c {
            return true; // trivial partition {0, t_f}; t_f > delta by pre.
        }
        // start_index(cut), end_index(cut), window of realizable positions
        let n_cuts = 2 * m + 1;
        let cut_start = |q: usize| if q < m { q + 1 } else { q - m };
        let cut_end = |q: usize| if q < m { q } else { q - m };
        // Order cuts by position: inside piece 0, event 1, inside 1, ...
        let order: Vec<usize> = {
            let mut o = Vec::with_capacity(n_cuts);
            o.push(m); // inside piece 0
            for j in 0..m {
                o.push(j); // event j (position events[j])
                o.push(m + j + 1); // inside piece j+1
            }
            o
        };
        let mut best: Vec<Option<Pos>> = vec![None; n_cuts];
        let start = Pos { at: 0.0, strict: false };
        for (oi, &q) in order.iter().enumerate() {
            // Transition from the artificial start boundary at 0.
            let mut cand: Option<Pos> = if diam[0][cut_end(q)] <= c {
                reach(start, q, m, &events, t_f, delta)
            } else {
                None
            };
            // Transitions from earlier cuts.
            for &p in &order[..oi] {
                if let Some(pp) = best[p] {
                    if diam[cut_start(p)][cut_end(q)] <= c {
                        if let Some(np) = reach(pp, q, m, &events, t_f, delta) {
                            cand = Some(match cand {
                                None => np,
                                Some(old) => better(old, np),
                            });
                        }
                    }
                }
            }
            best[q] = cand;
        }
        // Close with the final boundary at t_f.
        for q in 0..n_cuts {
            if let Some(p) = best[q] {
                if diam[cut_start(q)][m] <= c && t_f - p.at > delta {
                    return true;
                }
            }
        }
        false
    };

    for &c in &candidates {
        if feasible(c) {
            return Ok(c);
        }
    }
    Ok(diam[0][m])
}

fn better(a: Pos, b: Pos) -> Pos {
    if b.at < a.at || (b.at == a.at && !b.strict && a.strict) {
        b
    } else {
        a
    }
}

/// Earliest realizable position of cut `q` given the previous boundary.
fn reach(prev: Pos, q: usize, m: usize, events: &[f64], t_f: f64, delta: f64) -> Option<Pos> {
    let lower = prev.at + delta; // next boundary must be strictly above
    if q < m {
        // Exactly at events[q].
        if events[q] - prev.at > delta {
            Some(Pos { at: events[q], strict: false })
        } else {
            None
        }
    } else {
        // Strictly inside piece j = q - m: open window (w_lo, w_hi).
        let j = q - m;
        let w_lo = if j == 0 { 0.0 } else { events[j - 1] };
        let w_hi = if j == m { t_f } else { events[j] };
        let at = lower.max(w_lo);
        if at < w_hi {
            Some(Pos { at, strict: true })
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_partition(n: usize) -> Partition {
        Partition::from_cubes(Window::unit_interval(), 1.0 / n as f64).unwrap()
    }

    #[test]
    fn cubic_partition_counts_and_clipping() {
        let p = Partition::from_cubes(Window::unit_square(), 0.5).unwrap();
        assert_eq!(p.len(), 4);
        let p = Partition::from_cubes(Window::unit_interval(), 1.0).unwrap();
        assert_eq!(p.len(), 1);
        let p = Partition::from_cubes(Window::unit_interval(), 0.4).unwrap();
        assert_eq!(p.len(), 3);
        assert_abs_diff_eq!(p.cells()[2].lo[0], 0.8);
        assert_abs_diff_eq!(p.cells()[2].hi[0], 1.0);
    }

    #[test]
    fn locate_is_consistent_with_cells() {
        let p = Partition::from_cubes(Window::unit_square(), 0.3).unwrap();
        for (i, c) in p.cells().iter().enumerate() {
            assert_eq!(p.locate(&c.centroid()), Some(i));
        }
        assert_eq!(p.locate(&[2.0, 0.1]), None);
    }

    #[test]
    fn tv_identity_and_disjoint_atoms() {
        let m = vec![0.3, 0.7];
        assert_eq!(total_variation(&m, &m).unwrap(), 0.0);
        // delta_a vs delta_b as unit atoms on two cells
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        // (delta_a + delta_b) vs delta_a: positive part has one atom
        assert_eq!(total_variation(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(total_variation(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn sup_norm_examples() {
        let p1 = StepPath::zero(1.0, 1);
        assert_eq!(sup_norm(&p1, &p1).unwrap(), 0.0);

        // p2 = p1 plus one extra jump of mass m at t0, persisting to t_f.
        let mut base = StepPath::zero(1.0, 1);
        base.push(0.2, vec![0.5]).unwrap();
        let mut p2 = StepPath::zero(1.0, 1);
        p2.push(0.2, vec![0.5]).unwrap();
        p2.push(0.6, vec![0.5 + 0.25]).unwrap();
        assert_abs_diff_eq!(sup_norm(&base, &p2).unwrap(), 0.25, epsilon = 1e-15);

        // zero path vs a single step to mass M
        let mut p3 = StepPath::zero(1.0, 1);
        p3.push(0.4, vec![2.0]).unwrap();
        assert_abs_diff_eq!(sup_norm(&p1, &p3).unwrap(), 2.0, epsilon = 1e-15);

        let p4 = StepPath::zero(2.0, 1);
        assert!(sup_norm(&p1, &p4).is_err());
    }

    #[test]
    fn prokhorov_identity_and_two_diracs() {
        let p = unit_partition(10);
        let cents = p.centroids();
        let m: Vec<f64> = (0..10).map(|i| i as f64 / 45.0).collect();
        assert_eq!(prokhorov(&m, &m, &cents).unwrap(), 0.0);

        // unit atoms at distance d: expect min(d, 1)
        let mut a = vec![0.0; 10];
        let mut b = vec![0.0; 10];
        a[1] = 1.0;
        b[4] = 1.0;
        let d = euclid(&cents[1], &cents[4]);
        assert!(d < 1.0);
        assert_abs_diff_eq!(prokhorov(&a, &b, &cents).unwrap(), d, epsilon = 1e-8);

        // distance > 1 caps at 1
        let w = Window::new(vec![(0.0, 10.0)]).unwrap();
        let p = Partition::from_cubes(w, 1.0).unwrap();
        let cents = p.centroids();
        let mut a = vec![0.0; 10];
        let mut b = vec![0.0; 10];
        a[0] = 1.0;
        b[9] = 1.0;
        assert_abs_diff_eq!(prokhorov(&a, &b, &cents).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn prokhorov_mass_gap() {
        let p = unit_partition(4);
        let cents = p.centroids();
        let mut a = vec![0.0; 4];
        let mut b = vec![0.0; 4];
        a[2] = 1.0;
        b[2] = 1.3;
        assert_abs_diff_eq!(prokhorov(&a, &b, &cents).unwrap(), 0.3, epsilon = 1e-8);
    }

    /// Exhaustive check of the halo conditions over every cell union.
    fn prokhorov_bruteforce(m1: &[f64], m2: &[f64], cents: &[Vec<f64>]) -> f64 {
        let n = m1.len();
        let feasible = |eps: f64| {
            'outer: for f in 1u32..(1 << n) {
                let mass = |m: &[f64], set: u32| -> f64 {
                    (0..n).filter(|&i| set >> i & 1 == 1).map(|i| m[i]).sum()
                };
                let mut halo = 0u32;
                for i in 0..n {
                    if f >> i & 1 == 1 {
                        for j in 0..n {
                            if euclid(&cents[i], &cents[j]) <= eps {
                                halo |= 1 << j;
                            }
                        }
                    }
                }
                if mass(m1, f) > mass(m2, halo) + eps + 1e-12 {
                    break 'outer;
                }
                if mass(m2, f) > mass(m1, halo) + eps + 1e-12 {
                    break 'outer;
                }
                if f == (1 << n) - 1 {
                    return true;
                }
            }
            false
        };
        let mut lo = 0.0;
        let mut hi = total_variation(m1, m2).unwrap() + 1e-12;
        if hi <= 1e-12 {
            return 0.0;
        }
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    #[test]
    fn prokhorov_matches_subset_enumeration() {
        let p = unit_partition(6);
        let cents = p.centroids();
        let mut rng = crate::rng::stream(11, &[99]);
        use rand::Rng;
        for _ in 0..25 {
            let a: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let fast = prokhorov(&a, &b, &cents).unwrap();
            let slow = prokhorov_bruteforce(&a, &b, &cents);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-7);
        }
    }

    #[test]
    fn modulus_constant_and_single_jump() {
        let part = unit_partition(1);
        let constant = StepPath::zero(1.0, 1);
        for delta in [0.1, 0.3, 0.7] {
            assert_eq!(modulus_of_continuity(&constant, delta, &part).unwrap(), 0.0);
        }
        let mut jump = StepPath::zero(1.0, 1);
        jump.push(0.5, vec![0.8]).unwrap();
        assert_eq!(modulus_of_continuity(&jump, 0.3, &part).unwrap(), 0.0);
        assert!(modulus_of_continuity(&jump, 1.0, &part).is_err());
    }

    #[test]
    fn modulus_two_close_jumps() {
        // Jumps of mass 0.1 at t = 0.10 and t = 0.15: no admissible boundary
        // separates them when delta = 0.3, so the diameter 0.2 remains.
        let part = unit_partition(1);
        let mut p = StepPath::zero(1.0, 1);
        p.push(0.10, vec![0.1]).unwrap();
        p.push(0.15, vec![0.2]).unwrap();
        let w = modulus_of_continuity(&p, 0.3, &part).unwrap();
        assert_abs_diff_eq!(w, 0.2, epsilon = 1e-8);
        // With a small delta the two jumps can be isolated.
        let w = modulus_of_continuity(&p, 0.01, &part).unwrap();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn modulus_boundary_at_jump_blocked_by_gap() {
        // A single jump too close to 0 cannot be cut off, so the jump mass
        // shows up in the modulus.
        let part = unit_partition(1);
        let mut p = StepPath::zero(1.0, 1);
        p.push(0.2, vec![0.6]).unwrap();
        let w = modulus_of_continuity(&p, 0.25, &part).unwrap();
        assert_abs_diff_eq!(w, 0.6, epsilon = 1e-8);
    }

    #[test]
    fn gridded_measure_band_masses() {
        let part = unit_partition(2);
        let nu = GriddedMeasure::uniform(1.0, 1.0, 4, 4, part).unwrap();
        assert_abs_diff_eq!(nu.total_mass(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nu.arrivals_to(0.5), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(nu.band_mass(0.25, 0.75, 0.5, None), 0.25, epsilon = 1e-12);
        let per = nu.arrivals_per_cell_to(1.0);
        assert_abs_diff_eq!(per[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn avg_fraction_above_is_exact_for_crossings() {
        // Line from 0 to 1 over the box [0, 1]: area above is 1/2.
        assert_abs_diff_eq!(avg_fraction_above(0.0, 1.0, 0.0, 1.0), 0.5, epsilon = 1e-15);
        // Entirely below the band.
        assert_abs_diff_eq!(avg_fraction_above(0.0, 0.0, 0.5, 1.0), 1.0, epsilon = 1e-15);
        // Crossing u0 = 0.5 halfway: half the span full, then triangle.
        let got = avg_fraction_above(0.0, 1.0, 0.5, 1.0);
        assert_abs_diff_eq!(got, 0.5 + 0.25, epsilon = 1e-15);
    }

    #[test]
    fn step_path_evaluation_conventions() {
        let mut p = StepPath::zero(1.0, 2);
        p.push(0.3, vec![0.1, 0.0]).unwrap();
        p.push(0.3, vec![0.1, 0.2]).unwrap();
        p.push(0.7, vec![0.4, 0.2]).unwrap();
        assert_eq!(p.value_at(0.2), vec![0.0, 0.0]);
        // tie at 0.3: the later push wins
        assert_eq!(p.value_at(0.3), vec![0.1, 0.2]);
        assert_eq!(p.value_before(0.3), vec![0.0, 0.0]);
        assert_eq!(p.value_at(0.7), vec![0.4, 0.2]);
        assert_eq!(p.value_before(0.7), vec![0.1, 0.2]);
        assert!(p.is_increasing());
    }

    #[test]
    fn atomic_tv_on_shared_ground_set() {
        let a1 = MarkedAtom { time: 0.1, mark: 0.5, position: vec![0.2], target_cell: None };
        let a2 = MarkedAtom { time: 0.6, mark: 0.9, position: vec![0.7], target_cell: None };
        let both = MarkedPointSet::new(vec![a1.clone(), a2.clone()], 1.0, 1.0).unwrap();
        let first = MarkedPointSet::new(vec![a1], 1.0, 1.0).unwrap();
        assert_eq!(total_variation_atomic(&both, &both).unwrap(), 0.0);
        assert_eq!(total_variation_atomic(&both, &first).unwrap(), 1.0);
    }
}
