//! Solvers for the limiting integral equation of the busy-relay process.
//!
//! The scalar equation is a fixed point of the operator
//! `T(beta)_t = nu(ds, [beta_s, 1], W)` integrated over `s <= t`. Damped
//! Picard iteration converges for absolutely continuous drivers; plain
//! Picard oscillates between the even and odd iterates. The two-step block
//! scheme gives a lower bound with a computable error, and the spatial form
//! is solved cell by cell as a mixture of scalar solutions.

use crate::error::{Error, Result};
use crate::measure::{avg_fraction_above, GriddedMeasure, MarkedPointSet, StepPath};
use rayon::prelude::*;
use serde::Serialize;

/// Scalar path on a uniform time grid, linearly interpolated between knots.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPath {
    t_f: f64,
    values: Vec<f64>,
}

impl ScalarPath {
    pub fn new(t_f: f64, values: Vec<f64>) -> Result<Self> {
        if !(t_f > 0.0) {
            return Err(Error::domain("time horizon must be positive"));
        }
        if values.len() < 2 {
            return Err(Error::domain("scalar path needs at least 2 knots"));
        }
        Ok(ScalarPath { t_f, values })
    }

    pub fn zeros(t_f: f64, n: usize) -> Self {
        ScalarPath::new(t_f, vec![0.0; n + 1]).unwrap()
    }

    pub fn from_fn(t_f: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..=n).map(|k| f(t_f * k as f64 / n as f64)).collect();
        ScalarPath::new(t_f, values).unwrap()
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        self.t_f * k as f64 / self.n_steps() as f64
    }

    /// Linear interpolation; clamps outside `[0, t_f]`.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.n_steps() as f64;
        let s = (t / self.t_f * n).clamp(0.0, n);
        let k = (s.floor() as usize).min(self.n_steps() - 1);
        let frac = s - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    pub fn sup_distance(&self, other: &ScalarPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0] - 1e-12)
    }

    /// Linear resample onto `m` steps.
    pub fn resampled(&self, m: usize) -> ScalarPath {
        ScalarPath::from_fn(self.t_f, m, |t| self.at(t))
    }
}

/// Piecewise-constant path on blocks `((n-1) delta, n delta]`, zero at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPath {
    delta: f64,
    values: Vec<f64>,
}

impl BlockPath {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn block_values(&self) -> &[f64] {
        &self.values
    }

    pub fn t_f(&self) -> f64 {
        self.delta * self.values.len() as f64
    }

    /// Value at `t`. Blocks are left-open right-closed, so the path is
    /// left-continuous and left limits coincide with values for `t > 0`.
    pub fn at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let idx = (t / self.delta).ceil() as usize - 1;
        self.values[idx.min(self.values.len() - 1)]
    }
}

/// The two-step block approximation: the one-step overcount `upper` and the
/// restricted second pass `lower` (per-cell step path).
#[derive(Debug, Clone)]
pub struct EulerPair {
    pub delta: f64,
    pub upper: BlockPath,
    pub lower: StepPath,
}

impl EulerPair {
    pub fn lower_total_at(&self, t: f64) -> f64 {
        self.lower.total_at(t)
    }
}

/// Solver diagnostics serialized as the run report.
#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub residual: f64,
    pub grid_size: usize,
}

/// Where the Picard iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardInit {
    Zero,
    ArrivalsCap,
}

pub const DEFAULT_GRID: usize = 1000;
pub const MAX_ITER: usize = 10_000;

/// The integral operator `T(beta)_t = nu({s <= t, u >= beta_s})`, evaluated
/// exactly for the piecewise-uniform driver against the piecewise-linear
/// threshold. Output on the grid of `beta`.
pub fn apply_integral_operator(nu: &GriddedMeasure, beta: &ScalarPath) -> Result<ScalarPath> {
    if (nu.t_f() - beta.t_f()).abs() > 1e-9 {
        return Err(Error::mismatch("driver and path have different horizons"));
    }
    if beta.values().iter().any(|&b| !(-1e-9..=1.0 + 1e-9).contains(&b)) {
        return Err(Error::domain("threshold path must take values in [0, 1]"));
    }
    let cum = integrate_above_threshold(nu, beta, None)?;
    ScalarPath::new(beta.t_f(), cum)
}

/// Cumulative `nu({s <= t_k, u >= beta_s})` at the knots of `beta`,
/// restricted to one space cell when given.
fn integrate_above_threshold(
    nu: &GriddedMeasure,
    beta: &ScalarPath,
    cell: Option<usize>,
) -> Result<Vec<f64>> {
    let n = beta.n_steps();
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    let tg = nu.time_grid();
    let cg = nu.choice_grid();
    let nu_cells = nu.n_cells();
    let mut ti = 0usize;
    for k in 0..n {
        let (a, b) = (beta.knot_time(k), beta.knot_time(k + 1));
        // advance to the driver time-cell containing a
        while ti + 1 < tg.len() - 1 && tg[ti + 1] <= a + 1e-15 {
            ti += 1;
        }
        let mut s0 = a;
        let mut t_idx = ti;
        while s0 < b - 1e-15 {
            let s1 = b.min(tg[t_idx + 1]);
            let frac_t = (s1 - s0) / (tg[t_idx + 1] - tg[t_idx]);
            let b0 = beta.at(s0);
            let b1 = beta.at(s1);
            for ui in 0..cg.len() - 1 {
                let (u0, u1) = (cg[ui], cg[ui + 1]);
                let f = avg_fraction_above(b0, b1, u0, u1);
                if f == 0.0 {
                    continue;
                }
                let m = match cell {
                    Some(ci) => nu.box_mass(t_idx, ui, ci),
                    None => (0..nu_cells).map(|ci| nu.box_mass(t_idx, ui, ci)).sum(),
                };
                acc += m * frac_t * f;
            }
            s0 = s1;
            if s0 >= tg[t_idx + 1] - 1e-15 && t_idx + 1 < tg.len() - 1 {
                t_idx += 1;
            }
        }
        ti = t_idx;
        out.push(acc);
    }
    Ok(out)
}

/// Fixed point of the integral operator by damped Picard iteration on the
/// default grid.
pub fn solve_fixed_point(nu: &GriddedMeasure, tol: f64) -> Result<(ScalarPath, SolverReport)> {
    solve_fixed_point_on(nu, tol, DEFAULT_GRID, PicardInit::Zero)
}

/// Fixed point on an explicit grid with a chosen starting path. The result
/// satisfies `sup |beta - T(beta)| < 2 tol`.
pub fn solve_fixed_point_on(
    nu: &GriddedMeasure,
    tol: f64,
    grid: usize,
    init: PicardInit,
) -> Result<(ScalarPath, SolverReport)> {
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let t_f = nu.t_f();
    let mut beta = match init {
        PicardInit::Zero => ScalarPath::zeros(t_f, grid),
        PicardInit::ArrivalsCap => {
            ScalarPath::from_fn(t_f, grid, |t| nu.arrivals_to(t).min(1.0))
        }
    };
    let mut residual = f64::INFINITY;
    for iter in 0..MAX_ITER {
        let mapped = apply_integral_operator(nu, &beta)?;
        residual = beta.sup_distance(&mapped);
        if residual < 2.0 * tol {
            return Ok((
                beta,
                SolverReport {
                    iterations: iter,
                    residual,
                    grid_size: grid,
                },
            ));
        }
        let values: Vec<f64> = beta
            .values()
            .iter()
            .zip(mapped.values())
            .map(|(&b, &t)| (0.5 * (b + t)).clamp(0.0, 1.0))
            .collect();
        beta = ScalarPath::new(t_f, values)?;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        residual,
    })
}

/// Scalar equation with a general relay parameter `r` (threshold
/// `beta_s / r`): solved by rescaling to the unit-relay equation.
pub fn solve_fixed_point_r(
    nu: &GriddedMeasure,
    r: f64,
    tol: f64,
    grid: usize,
) -> Result<(ScalarPath, SolverReport)> {
    if !(r > 0.0) {
        return Err(Error::domain("relay mass must be positive"));
    }
    let scaled = nu.scaled(1.0 / r)?;
    let (beta, report) = solve_fixed_point_on(&scaled, tol, grid, PicardInit::Zero)?;
    let values = beta.values().iter().map(|&b| b * r).collect();
    Ok((ScalarPath::new(nu.t_f(), values)?, report))
}

/// Per-cell busy path `beta_t(dx) = nu({s <= t, u >= beta_s / r}, dx)`
/// recovered from the scalar solution, on the knots of `beta`.
pub fn busy_measure_path(nu: &GriddedMeasure, beta: &ScalarPath, r: f64) -> Result<StepPath> {
    if !(r > 0.0) {
        return Err(Error::domain("relay mass must be positive"));
    }
    let threshold = ScalarPath::new(
        beta.t_f(),
        beta.values().iter().map(|&b| (b / r).min(1.0)).collect(),
    )?;
    let n_cells = nu.n_cells();
    let per_cell: Vec<Vec<f64>> = (0..n_cells)
        .map(|ci| integrate_above_threshold(nu, &threshold, Some(ci)))
        .collect::<Result<_>>()?;
    let mut path = StepPath::zero(nu.t_f(), n_cells);
    for k in 0..=threshold.n_steps() {
        let value: Vec<f64> = (0..n_cells).map(|ci| per_cell[ci][k]).collect();
        path.push(threshold.knot_time(k), value)?;
    }
    Ok(path)
}

/// Normalized frustration path `gamma_t(dx) = nu([0,t],[0,1],dx) - beta_t(dx)`
/// for a scalar solution of the equation.
pub fn frustrated_path(nu: &GriddedMeasure, beta: &ScalarPath) -> Result<StepPath> {
    let busy = busy_measure_path(nu, beta, 1.0)?;
    frustration_from_busy(nu, &busy)
}

/// Frustration path of a two-step approximation.
pub fn frustrated_path_euler(nu: &GriddedMeasure, pair: &EulerPair) -> Result<StepPath> {
    frustration_from_busy(nu, &pair.lower)
}

/// Per-cell arrivals minus a given busy path.
pub fn frustration_from_busy(nu: &GriddedMeasure, busy: &StepPath) -> Result<StepPath> {
    let n_cells = nu.n_cells();
    let mut path = StepPath::zero(nu.t_f(), n_cells);
    for (i, &t) in busy.times().iter().enumerate() {
        let arr = nu.arrivals_per_cell_to(t);
        let mut value = Vec::with_capacity(n_cells);
        for ci in 0..n_cells {
            let g = arr[ci] - busy.values()[i][ci];
            if g < -1e-12 {
                return Err(Error::Consistency(format!(
                    "negative frustration mass {g:.3e} in cell {ci}"
                )));
            }
            value.push(g.max(0.0));
        }
        path.push(t, value)?;
    }
    Ok(path)
}

fn block_count(t_f: f64, delta: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(Error::domain("block length must be positive"));
    }
    let q = t_f / delta;
    if (q - q.round()).abs() > 1e-9 || q.round() < 1.0 {
        return Err(Error::domain("horizon must be an integer number of blocks"));
    }
    Ok(q.round() as usize)
}

/// Two-step block scheme for a gridded driver. The lower path is exact at
/// block boundaries and at the driver's time knots.
pub fn euler_two_step(nu: &GriddedMeasure, delta: f64) -> Result<EulerPair> {
    let t_f = nu.t_f();
    let n_blocks = block_count(t_f, delta)?;
    let n_cells = nu.n_cells();

    let mut upper_values = Vec::with_capacity(n_blocks);
    let mut lower = StepPath::zero(t_f, n_cells);
    let mut prev_cells = vec![0.0; n_cells];
    let mut prev_total = 0.0;
    lower.push(0.0, prev_cells.clone())?;

    // evaluation knots inside each block: driver knots plus the boundary
    let tg: Vec<f64> = nu.time_grid().to_vec();
    for n in 1..=n_blocks {
        let a = (n - 1) as f64 * delta;
        let b = n as f64 * delta;
        let up = prev_total + nu.band_mass(a, b, 0.0, None);
        upper_values.push(up);
        let mut knots: Vec<f64> = tg.iter().copied().filter(|&t| t > a && t < b).collect();
        knots.push(b);
        for t in knots {
            let mut value = Vec::with_capacity(n_cells);
            for ci in 0..n_cells {
                value.push(prev_cells[ci] + nu.band_mass(a, t, up, Some(ci)));
            }
            lower.push(t, value)?;
        }
        prev_cells = lower.value_at(b);
        prev_total = prev_cells.iter().sum();
    }
    Ok(EulerPair {
        delta,
        upper: BlockPath {
            delta,
            values: upper_values,
        },
        lower,
    })
}

/// Two-step block scheme for an empirical driver; jumps are exact.
pub fn euler_two_step_points(points: &MarkedPointSet, delta: f64) -> Result<EulerPair> {
    let t_f = points.t_f();
    let n_blocks = block_count(t_f, delta)?;
    let w = points.weight();

    let mut upper_values = Vec::with_capacity(n_blocks);
    let mut lower = StepPath::zero(t_f, 1);
    let mut prev = 0.0;
    let atoms = points.atoms();
    let mut i = 0usize;
    for n in 1..=n_blocks {
        let a = (n - 1) as f64 * delta;
        let b = n as f64 * delta;
        let in_block = |t: f64| (t > a || (n == 1 && t >= 0.0)) && t <= b;
        let count = atoms[i..].iter().take_while(|at| in_block(at.time)).count();
        let up = prev + w * count as f64;
        upper_values.push(up);
        let mut running = prev;
        for at in &atoms[i..i + count] {
            if at.mark >= up {
                running += w;
                lower.push(at.time, vec![running])?;
            }
        }
        prev = running;
        i += count;
    }
    Ok(EulerPair {
        delta,
        upper: BlockPath {
            delta,
            values: upper_values,
        },
        lower,
    })
}

/// Exact scalar solution for an empirical driver with relay parameter `r`:
/// an arrival at `(t, u)` is accepted when `u >= B_{t-} / r`.
pub fn exact_busy_empirical(points: &MarkedPointSet, r: f64) -> Result<StepPath> {
    if !(r > 0.0) {
        return Err(Error::domain("relay mass must be positive"));
    }
    let mut path = StepPath::zero(points.t_f(), 1);
    let mut busy = 0.0;
    for at in points.atoms() {
        // accepted iff the mark clears the running threshold; for
        // busy / r > 1 no mark qualifies
        if at.mark >= busy / r {
            busy += points.weight();
            path.push(at.time, vec![busy])?;
        }
    }
    Ok(path)
}

/// Exact mass `nu({(s, u): u between the two threshold paths})`, the
/// measure of the band `I_s = [min(f_s, g_s), max(f_s, g_s)]`.
pub fn band_between(nu: &GriddedMeasure, f: &ScalarPath, g: &BlockPath) -> Result<f64> {
    if (nu.t_f() - f.t_f()).abs() > 1e-9 {
        return Err(Error::mismatch("driver and path have different horizons"));
    }
    // Merge knots: solver grid, driver grid, block boundaries.
    let mut knots: Vec<f64> = (0..=f.n_steps()).map(|k| f.knot_time(k)).collect();
    knots.extend(nu.time_grid().iter().copied());
    let n_blocks = (nu.t_f() / g.delta()).round() as usize;
    knots.extend((0..=n_blocks).map(|k| k as f64 * g.delta()));
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let tg = nu.time_grid();
    let cg = nu.choice_grid();
    let mut acc = 0.0;
    for wnd in knots.windows(2) {
        let (s0, s1) = (wnd[0], wnd[1]);
        if s1 <= s0 {
            continue;
        }
        let mid = 0.5 * (s0 + s1);
        let t_idx = tg.partition_point(|&t| t <= mid).saturating_sub(1).min(tg.len() - 2);
        let frac_t = (s1 - s0) / (tg[t_idx + 1] - tg[t_idx]);
        let up = g.at(mid); // constant within the segment
        let (f0, f1) = (f.at(s0), f.at(s1));
        let (lo0, lo1) = (f0.min(up), f1.min(up));
        let (hi0, hi1) = (f0.max(up), f1.max(up));
        for ui in 0..cg.len() - 1 {
            let (u0, u1) = (cg[ui], cg[ui + 1]);
            let above_lo = avg_fraction_above(lo0, lo1, u0, u1);
            let above_hi = avg_fraction_above(hi0, hi1, u0, u1);
            let band = above_lo - above_hi;
            if band <= 0.0 {
                continue;
            }
            let m: f64 = (0..nu.n_cells()).map(|ci| nu.box_mass(t_idx, ui, ci)).sum();
            acc += m * frac_t * band;
        }
    }
    Ok(acc)
}

/// Closed-form scalar solution for a product driver with time distribution
/// `F` and spatial mass `m_s`: `beta_t = (1 - exp(-m_s F(t))) / m_s`.
pub fn explicit_oracle(
    time_cdf: impl Fn(f64) -> f64,
    spatial_mass: f64,
    grid: usize,
    t_f: f64,
) -> Result<ScalarPath> {
    if !(spatial_mass > 0.0) {
        return Err(Error::domain("spatial mass must be positive"));
    }
    if time_cdf(0.0).abs() > 1e-12 {
        return Err(Error::domain("time distribution must start at zero"));
    }
    let mut prev = f64::NEG_INFINITY;
    let mut values = Vec::with_capacity(grid + 1);
    for k in 0..=grid {
        let t = t_f * k as f64 / grid as f64;
        let ft = time_cdf(t);
        if ft < prev - 1e-12 {
            return Err(Error::domain("time distribution must be nondecreasing"));
        }
        prev = ft;
        values.push((1.0 - (-spatial_mass * ft).exp()) / spatial_mass);
    }
    ScalarPath::new(t_f, values)
}

/// Scalar solve for one relay cell of the spatial equation.
#[derive(Debug, Clone)]
pub struct CellSolution {
    /// Total busy mass path of this relay cell.
    pub beta: ScalarPath,
    /// Per-transmitter-cell busy masses at the grid knots.
    pub busy: StepPath,
    pub report: SolverReport,
}

/// Mixture solution of the spatial equation: one scalar solve per relay
/// cell, plus the aggregated frustration path.
#[derive(Debug, Clone)]
pub struct SpatialSolution {
    pub relay_mass: Vec<f64>,
    /// `None` for degenerate zero-relay cells (all arrivals frustrated).
    pub cells: Vec<Option<CellSolution>>,
    /// Aggregated frustration path over transmitter cells.
    pub frustrated: StepPath,
}

impl SpatialSolution {
    /// Busy mass `b_t(x-cell, relay-cell)`.
    pub fn busy_mass(&self, t: f64, x_cell: usize, relay_cell: usize) -> f64 {
        match &self.cells[relay_cell] {
            Some(sol) => sol.busy.value_at(t)[x_cell],
            None => 0.0,
        }
    }
}

/// Solves the spatial equation driven by per-relay-cell measures
/// (`drivers[i]` is the arrival measure of transmitters pointing into relay
/// cell `i`) with per-cell relay masses `nu_r`. Cells solve independently.
pub fn solve_spatial(
    drivers: &[GriddedMeasure],
    nu_r: &[f64],
    tol: f64,
    grid: usize,
) -> Result<SpatialSolution> {
    if drivers.len() != nu_r.len() {
        return Err(Error::mismatch(format!(
            "{} drivers for {} relay cells",
            drivers.len(),
            nu_r.len()
        )));
    }
    if drivers.is_empty() {
        return Err(Error::domain("at least one relay cell required"));
    }
    let t_f = drivers[0].t_f();
    let n_x = drivers[0].n_cells();
    let cells: Vec<Option<CellSolution>> = drivers
        .par_iter()
        .zip(nu_r.par_iter())
        .map(|(nu, &r)| -> Result<Option<CellSolution>> {
            if r <= 0.0 {
                return Ok(None);
            }
            let (beta, report) = solve_fixed_point_r(nu, r, tol, grid)?;
            let busy = busy_measure_path(nu, &beta, r)?;
            Ok(Some(CellSolution { beta, busy, report }))
        })
        .collect::<Result<_>>()?;

    // gamma_t(dx) = total arrivals into dx minus total busy mass at dx
    let mut frustrated = StepPath::zero(t_f, n_x);
    let knots: Vec<f64> = (0..=grid).map(|k| t_f * k as f64 / grid as f64).collect();
    for &t in &knots {
        let mut value = vec![0.0; n_x];
        for (i, nu) in drivers.iter().enumerate() {
            let arr = nu.arrivals_per_cell_to(t);
            match &cells[i] {
                Some(sol) => {
                    let b = sol.busy.value_at(t);
                    for ci in 0..n_x {
                        value[ci] += (arr[ci] - b[ci]).max(0.0);
                    }
                }
                None => {
                    for ci in 0..n_x {
                        value[ci] += arr[ci];
                    }
                }
            }
        }
        frustrated.push(t, value)?;
    }
    Ok(SpatialSolution {
        relay_mass: nu_r.to_vec(),
        cells,
        frustrated,
    })
}
