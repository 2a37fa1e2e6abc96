//! Inequalities tying the block scheme and the solver to their targets:
//! dominance, approximation error, stability in the driver, uniqueness of
//! the fixed point, and law-of-large-numbers consistency.

use relaynet::checks;
use relaynet::fluid::{
    apply_integral_operator, euler_two_step, solve_fixed_point_on, PicardInit, ScalarPath,
};
use relaynet::measure::{GriddedMeasure, Partition, Window};
use relaynet::rng::{derive, tag};
use relaynet::sim::{sample_transmitters, simulate_threshold};
use rayon::prelude::*;

#[test]
fn solver_residual_contract_on_random_drivers() {
    for k in 0..20 {
        let nu = checks::random_gridded_driver(101, k);
        let tol = 1e-9;
        let (beta, report) = solve_fixed_point_on(&nu, tol, 600, PicardInit::Zero).unwrap();
        assert!(report.residual < 2.0 * tol, "residual {}", report.residual);
        let mapped = apply_integral_operator(&nu, &beta).unwrap();
        assert!(beta.sup_distance(&mapped) < 2.0 * tol);
        assert!(beta.is_nondecreasing());
    }
}

#[test]
fn fixed_point_is_unique_between_extreme_starts() {
    // Picard from zero and from the arrivals cap meet at the same path.
    for k in 0..10 {
        let nu = checks::random_gridded_driver(103, 50 + k);
        let tol = 1e-9;
        let (lo, _) = solve_fixed_point_on(&nu, tol, 600, PicardInit::Zero).unwrap();
        let (hi, _) = solve_fixed_point_on(&nu, tol, 600, PicardInit::ArrivalsCap).unwrap();
        assert!(lo.sup_distance(&hi) < 4.0 * tol, "gap {}", lo.sup_distance(&hi));
    }
}

#[test]
fn euler_dominance_and_error_hold_on_random_drivers() {
    let g = checks::euler_bounds_gridded(104, 40).unwrap();
    assert!(g.dominance.passed(), "{:?}", g.dominance);
    assert!(g.error_bound.passed(), "{:?}", g.error_bound);
    let e = checks::euler_bounds_empirical(105, 40).unwrap();
    assert!(e.dominance.passed(), "{:?}", e.dominance);
    assert!(e.error_bound.passed(), "{:?}", e.error_bound);
}

#[test]
fn band_bound_controls_the_scheme_error() {
    let g = checks::norm_approx_band_gridded(106, 30).unwrap();
    assert!(g.passed(), "{g:?}");
    let e = checks::norm_approx_band_empirical(107, 30).unwrap();
    assert!(e.passed(), "{e:?}");
}

#[test]
fn solution_is_stable_in_the_driver() {
    let s = checks::driver_stability(108, 25).unwrap();
    assert!(s.passed(), "{s:?}");
}

#[test]
fn block_scheme_is_continuous_in_the_driver() {
    // gamma^delta evaluations converge as the driver perturbation vanishes
    let nu = checks::random_gridded_driver(109, 7);
    let delta = 0.25;
    let base = euler_two_step(&nu, delta).unwrap();
    let mut last = f64::INFINITY;
    for step in 1..=4 {
        let scale = 0.5f64.powi(step);
        let perturbed = nu.scaled(1.0 + scale).unwrap();
        let pair = euler_two_step(&perturbed, delta).unwrap();
        let mut gap: f64 = 0.0;
        for &t in base.lower.times() {
            gap = gap.max((base.lower.total_at(t) - pair.lower.total_at(t)).abs());
        }
        assert!(gap <= last + 1e-12);
        last = gap;
    }
    assert!(last < 0.2);
}

#[test]
fn threshold_simulation_tracks_the_fluid_path() {
    // mean busy path over replicas at high intensity stays within 0.01 of
    // the solved fluid path on every probe knot
    let part = Partition::single_cell(Window::unit_interval());
    let nu = GriddedMeasure::uniform(1.0, 1.0, 1, 1, part.clone()).unwrap();
    let (beta, _) = solve_fixed_point_on(&nu, 1e-9, 2000, PicardInit::Zero).unwrap();
    let lambda = 1e4;
    let replicas = 100u64;
    let probes: Vec<f64> = (0..=50).map(|k| k as f64 / 50.0).collect();
    let sums: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut pts = sample_transmitters(lambda, &nu, derive(7, &[tag::REPLICA, r]))
                .unwrap()
                .atoms()
                .to_vec();
            for a in &mut pts {
                a.target_cell = Some(0);
            }
            let pts =
                relaynet::measure::MarkedPointSet::new(pts, 1.0 / lambda, 1.0).unwrap();
            let trace = simulate_threshold(&pts, &[1.0], &part).unwrap();
            probes.iter().map(|&t| trace.busy.total_at(t)).collect()
        })
        .collect();
    for (k, &t) in probes.iter().enumerate() {
        let mean: f64 = sums.iter().map(|s| s[k]).sum::<f64>() / replicas as f64;
        assert!(
            (mean - beta.at(t)).abs() < 0.01,
            "t = {t}: mean {mean} vs fluid {}",
            beta.at(t)
        );
    }
}

#[test]
fn gamma_equals_arrivals_minus_busy_for_the_scheme() {
    let nu = checks::random_gridded_driver(110, 3);
    let pair = euler_two_step(&nu, 0.2).unwrap();
    let gamma = relaynet::fluid::frustrated_path_euler(&nu, &pair).unwrap();
    for &t in gamma.times() {
        let expect = nu.arrivals_to(t) - pair.lower.total_at(t);
        assert!((gamma.total_at(t) - expect).abs() < 1e-12);
        assert!(gamma.total_at(t) >= -1e-12);
    }
    assert!(gamma.is_increasing());
}

#[test]
fn operator_threshold_scaling_matches_relay_count() {
    // DE with relay parameter r rescales to the unit equation
    let nu = checks::random_gridded_driver(111, 4);
    let r = 1.7;
    let (raw, _) = relaynet::fluid::solve_fixed_point_r(&nu, r, 1e-10, 800).unwrap();
    let scaled_nu = nu.scaled(1.0 / r).unwrap();
    let (unit, _) = solve_fixed_point_on(&scaled_nu, 1e-10, 800, PicardInit::Zero).unwrap();
    let rescaled = ScalarPath::new(1.0, unit.values().iter().map(|v| v * r).collect()).unwrap();
    assert!(raw.sup_distance(&rescaled) < 1e-9);
}
