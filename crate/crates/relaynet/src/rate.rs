//! Relative entropy and the variational cost of frustration paths.
//!
//! The scalar cost of a target `gamma` is
//! `inf over beta of the integral of h(beta' | 1 - beta) + h(gamma' | beta)`
//! over increasing absolutely continuous paths, with
//! `h(x | y) = x log(x / y) - x + y`. The infimum is computed by an exact
//! dynamic program on a beta grid; event costs over `{gamma_T >= a}` come
//! from the concave dual in the integrated-beta variable.

use crate::error::{Error, Result};
use crate::fluid::ScalarPath;
use crate::measure::GriddedMeasure;
use rayon::prelude::*;

/// Sentinel standing in for infinite path costs inside the dynamic program.
pub const INFINITE_COST: f64 = 1e12;

/// Pointwise entropy kernel `h(x | y) = x log(x / y) - x + y`, with
/// `h(0 | y) = y`, `h(x | 0) = infinity` for `x > 0`, `h(0 | 0) = 0`.
pub fn entropy_pair(x: f64, y: f64) -> Result<f64> {
    if x < 0.0 || y < 0.0 {
        return Err(Error::domain("entropy arguments must be nonnegative"));
    }
    Ok(entropy_pair_unchecked(x, y))
}

#[inline]
fn entropy_pair_unchecked(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        y
    } else if y == 0.0 {
        f64::INFINITY
    } else {
        x * (x / y).ln() - x + y
    }
}

/// Relative entropy of two gridded measures with piecewise-constant
/// densities on a common grid: the exact cellwise sum of the entropy
/// kernel, infinite as soon as the numerator charges a null cell.
pub fn relative_entropy(nu: &GriddedMeasure, mu: &GriddedMeasure) -> Result<f64> {
    if nu.time_grid() != mu.time_grid()
        || nu.choice_grid() != mu.choice_grid()
        || nu.n_cells() != mu.n_cells()
    {
        return Err(Error::mismatch("measures live on different grids"));
    }
    let mut acc = 0.0;
    for ti in 0..nu.n_time() {
        for ui in 0..nu.n_choice() {
            for ci in 0..nu.n_cells() {
                let h = entropy_pair_unchecked(nu.box_mass(ti, ui, ci), mu.box_mass(ti, ui, ci));
                if h.is_infinite() {
                    return Ok(f64::INFINITY);
                }
                acc += h;
            }
        }
    }
    Ok(acc)
}

/// Output of the scalar rate dynamic program.
#[derive(Debug, Clone)]
pub struct RatePath {
    /// Minimal cost; `INFINITE_COST` and above means no finite path exists.
    pub value: f64,
    pub infinite: bool,
    /// Optimizing busy path on the step grid.
    pub beta: ScalarPath,
    /// The target, resampled to the step grid.
    pub gamma: ScalarPath,
    pub beta_grid: usize,
    pub time_steps: usize,
}

/// Step cost `dt * h_sum`, with infinities encoded as the flat sentinel so
/// that one forbidden step already exceeds every finite path cost.
#[inline]
fn step_cost(dt: f64, h_sum: f64) -> f64 {
    if h_sum.is_finite() {
        (dt * h_sum).min(INFINITE_COST)
    } else {
        INFINITE_COST
    }
}

/// Exact grid minimization of the scalar cost for a fixed increasing target.
///
/// States are `beta in {0, 1/G, ..., 1}`; every nonnegative increment is
/// allowed per step of length `t_f / m`, at cost
/// `dt * [h(dbeta/dt | 1 - beta) + h(dgamma/dt | beta)]`. The per-step cost
/// is convex in the increment, so refinement only relaxes the problem.
pub fn scalar_rate_dp(gamma_target: &ScalarPath, beta_grid: usize, time_steps: usize) -> Result<RatePath> {
    if beta_grid < 1 || time_steps < 1 {
        return Err(Error::domain("grid sizes must be positive"));
    }
    let gamma = gamma_target.resampled(time_steps);
    if !gamma.is_nondecreasing() {
        return Err(Error::domain("target path must be nondecreasing"));
    }
    let g = beta_grid;
    let m = time_steps;
    let t_f = gamma.t_f();
    let dt = t_f / m as f64;

    let mut value = vec![INFINITE_COST * 2.0; g + 1];
    value[0] = 0.0;
    let mut choice = vec![0u32; m * (g + 1)];

    for n in 0..m {
        let dgamma_rate = (gamma.values()[n + 1] - gamma.values()[n]).max(0.0) / dt;
        let prev = value.clone();
        let stage: Vec<(f64, u32)> = (0..=g)
            .into_par_iter()
            .map(|j2| {
                let mut best = f64::INFINITY;
                let mut arg = 0u32;
                for j in 0..=j2 {
                    if prev[j] >= INFINITE_COST {
                        continue;
                    }
                    let beta = j as f64 / g as f64;
                    let db_rate = (j2 - j) as f64 / g as f64 / dt;
                    let cost = step_cost(
                        dt,
                        entropy_pair_unchecked(db_rate, 1.0 - beta)
                            + entropy_pair_unchecked(dgamma_rate, beta),
                    );
                    let total = prev[j] + cost;
                    if total < best {
                        best = total;
                        arg = j as u32;
                    }
                }
                (best.min(INFINITE_COST * 2.0), arg)
            })
            .collect();
        for (j2, &(v, a)) in stage.iter().enumerate() {
            value[j2] = v;
            choice[n * (g + 1) + j2] = a;
        }
    }

    let (mut best_j, mut best_v) = (0usize, f64::INFINITY);
    for (j, &v) in value.iter().enumerate() {
        if v < best_v {
            best_v = v;
            best_j = j;
        }
    }
    let infinite = best_v >= INFINITE_COST;

    let mut beta_values = vec![0.0; m + 1];
    let mut j = best_j;
    for n in (0..m).rev() {
        beta_values[n + 1] = j as f64 / g as f64;
        j = choice[n * (g + 1) + j] as usize;
    }
    beta_values[0] = 0.0;
    Ok(RatePath {
        value: best_v,
        infinite,
        beta: ScalarPath::new(t_f, beta_values)?,
        gamma,
        beta_grid,
        time_steps,
    })
}

/// Minimal unconstrained beta cost plus a linear tilt `-theta * integral beta`.
fn tilted_beta_cost(theta: f64, g: usize, m: usize, t_f: f64) -> f64 {
    let dt = t_f / m as f64;
    let mut value = vec![INFINITE_COST * 2.0; g + 1];
    value[0] = 0.0;
    for _ in 0..m {
        let prev = value.clone();
        let stage: Vec<f64> = (0..=g)
            .into_par_iter()
            .map(|j2| {
                let mut best = f64::INFINITY;
                for j in 0..=j2 {
                    if prev[j] >= INFINITE_COST {
                        continue;
                    }
                    let beta = j as f64 / g as f64;
                    let db_rate = (j2 - j) as f64 / g as f64 / dt;
                    let h = entropy_pair_unchecked(db_rate, 1.0 - beta);
                    let cost = if h.is_finite() {
                        dt * (h - theta * beta)
                    } else {
                        INFINITE_COST
                    };
                    let total = prev[j] + cost;
                    if total < best {
                        best = total;
                    }
                }
                best.min(INFINITE_COST * 2.0)
            })
            .collect();
        value = stage;
    }
    value.into_iter().fold(f64::INFINITY, f64::min)
}

/// Cost of the event `{gamma_{t_f} >= a}`: the infimum of the scalar rate
/// over all targets reaching level `a`.
///
/// For a fixed busy path the inner optimization over `gamma` is exact:
/// spreading the mass `a` proportionally to `beta` costs
/// `h(a | integral of beta)`, or nothing once the integral reaches `a`.
/// The remaining minimization over `beta` is solved through its concave
/// dual in the integrated-beta variable, whose conjugate term is
/// `a log(1 + theta)`.
pub fn event_rate(a: f64, beta_grid: usize, time_steps: usize, t_f: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(Error::domain("event level must be nonnegative"));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let dual = |theta: f64| a * (1.0 + theta).ln() + tilted_beta_cost(theta, beta_grid, time_steps, t_f);

    // expand until the concave dual starts decreasing
    let mut hi = 1.0;
    let mut last = dual(0.0);
    loop {
        let v = dual(hi);
        if v < last || hi > 1e6 {
            break;
        }
        last = v;
        hi *= 2.0;
    }
    // golden-section maximization on [0, hi]
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0f64, hi);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (dual(x1), dual(x2));
    for _ in 0..48 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = dual(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = dual(x1);
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(f1.max(f2).max(0.0))
}

/// Least-squares slope of `-log p` against `lambda` (with intercept), the
/// finite-intensity estimate of the decay rate.
pub fn ldp_slope(lambdas: &[f64], p_hat: &[f64]) -> Result<f64> {
    if lambdas.len() != p_hat.len() {
        return Err(Error::mismatch("lambda grid and probabilities differ in length"));
    }
    if lambdas.len() < 2 {
        return Err(Error::domain("need at least two intensities"));
    }
    if p_hat.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::domain(
            "every probability must be positive; use more replicas or a smaller event",
        ));
    }
    let n = lambdas.len() as f64;
    let ys: Vec<f64> = p_hat.iter().map(|&p| -p.ln()).collect();
    let lbar = lambdas.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&l, &y) in lambdas.iter().zip(&ys) {
        num += (l - lbar) * (y - ybar);
        den += (l - lbar) * (l - lbar);
    }
    if den == 0.0 {
        return Err(Error::domain("lambda grid must contain distinct values"));
    }
    Ok(num / den)
}
