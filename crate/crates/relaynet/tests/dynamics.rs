//! Distribution-level checks of the simulators: equality in law of the two
//! dynamics, conservation, the coupling intensity, the previsible Poisson
//! domination, and the Poisson concentration inequality behind them.

use relaynet::checks;
use relaynet::measure::{GriddedMeasure, Partition, Window};
use relaynet::rng::{derive, tag};
use relaynet::sim::{sample_transmitters, simulate_threshold, CouplingBase, coupled_poisson};
use relaynet::spatial::{partition_window, KernelTable};
use statrs::distribution::{ChiSquared, ContinuousCDF, DiscreteCDF, Poisson};

#[test]
fn simulators_agree_on_the_enumerable_instance() {
    // exact law: P(1 frustrated) = 3/4, P(2 frustrated) = 1/4
    let replicas = 20_000;
    let (choice, threshold) = checks::mark_equivalence_counts(31, replicas).unwrap();
    for counts in [&choice, &threshold] {
        assert_eq!(counts[0], 0);
        assert_eq!(counts[3], 0);
        let p1 = counts[1] as f64 / replicas as f64;
        let sigma = (0.75 * 0.25 / replicas as f64).sqrt();
        assert!((p1 - 0.75).abs() < 3.0 * sigma, "p1 = {p1}");
    }
    let stat = chi2_two_sample(&choice[1..3], &threshold[1..3]);
    let crit = ChiSquared::new(1.0).unwrap().inverse_cdf(1.0 - 1e-3);
    assert!(stat < crit, "chi2 {stat} above critical {crit}");
}

fn chi2_two_sample(a: &[u64], b: &[u64]) -> f64 {
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let pooled = (x + y) as f64 / (na + nb);
        stat += (x as f64 - na * pooled).powi(2) / (na * pooled);
        stat += (y as f64 - nb * pooled).powi(2) / (nb * pooled);
    }
    stat
}

#[test]
fn conservation_holds_for_both_simulators() {
    let part = Partition::single_cell(Window::unit_interval());
    let nu = GriddedMeasure::uniform(1.0, 1.0, 2, 2, part.clone()).unwrap();
    let kernel = KernelTable::constant(&part, &part, 1.0).unwrap();
    for r in 0..20u64 {
        let seed = derive(33, &[tag::REPLICA, r]);
        let mut atoms = sample_transmitters(60.0, &nu, seed).unwrap().atoms().to_vec();
        for a in &mut atoms {
            a.target_cell = Some(0);
        }
        let pts = relaynet::measure::MarkedPointSet::new(atoms, 1.0 / 60.0, 1.0).unwrap();
        let trace = simulate_threshold(&pts, &[0.8], &part).unwrap();
        assert!(trace.conservation_slack(pts.weight()) < 1e-9);
        assert!(trace.frustrated.is_increasing());
        assert!(trace.busy.is_increasing());

        let relays = relaynet::sim::RelayConfig::sample_uniform(48, part.window(), 60.0, seed).unwrap();
        let trace = relaynet::sim::simulate_relay_choice(&pts, &relays, &kernel, seed).unwrap();
        assert!(trace.conservation_slack(pts.weight()) < 1e-9);
    }
}

#[test]
fn relay_dominance_and_lipschitz_pathwise() {
    let r = checks::relay_dominance(34, 200, &[0.5, 0.9]).unwrap();
    assert!(r.passed(), "{r:?}");
    let l = checks::lipschitz_edits(35, 200).unwrap();
    assert!(l.passed(), "{l:?}");
    let loc = checks::localization_identity(36, 50).unwrap();
    assert!(loc.passed(), "{loc:?}");
}

#[test]
fn coupling_mean_matches_the_band_intensity() {
    // f >= g pointwise: one band is empty, the distance is a Poisson count
    let part = partition_window(&Window::unit_interval(), 0.25).unwrap();
    let f = KernelTable::from_fn(&part, &part, |x, y| 0.6 + 0.3 * x[0] * y[0]).unwrap();
    let g = KernelTable::from_fn(&part, &part, |x, y| 0.4 + 0.2 * x[0] * y[0]).unwrap();
    let base = CouplingBase {
        lambda: 80.0,
        t_f: 1.0,
        x_mass: vec![0.25; 4],
        y_mass: vec![0.25; 4],
        level_cap: 1.0,
    };
    let mut expected = 0.0;
    for xi in 0..4 {
        for yi in 0..4 {
            expected += (f.value(xi, yi) - g.value(xi, yi)).abs() * 0.25 * 0.25;
        }
    }
    let expected_count = base.lambda * expected;
    let replicas = 400u64;
    let mut total = 0.0;
    for r in 0..replicas {
        let (_, _, tv) = coupled_poisson(&f, &g, &base, derive(37, &[tag::REPLICA, r])).unwrap();
        total += base.lambda * tv;
    }
    let mean = total / replicas as f64;
    let sigma = (expected_count / replicas as f64).sqrt();
    assert!(
        (mean - expected_count).abs() < 3.0 * sigma,
        "mean {mean} vs {expected_count} (3 sigma {})",
        3.0 * sigma
    );
}

#[test]
fn near_threshold_counts_are_poisson_dominated() {
    // stochastic domination up to one DKW band at confidence 1e-3
    let (lambda, eps, reps) = (200.0, 0.05, 2_000usize);
    let counts = checks::near_threshold_counts(38, reps, lambda, eps).unwrap();
    let poisson = Poisson::new(2.0 * eps * lambda).unwrap();
    let band = (f64::ln(2.0 / 1e-3) / (2.0 * reps as f64)).sqrt();
    let max_k = counts.iter().copied().max().unwrap_or(0) + 5;
    for k in 0..=max_k {
        let emp = counts.iter().filter(|&&c| c <= k).count() as f64 / reps as f64;
        let theo = poisson.cdf(k);
        assert!(
            emp >= theo - band,
            "empirical CDF {emp} below Poisson CDF {theo} - band {band} at k = {k}"
        );
    }
}

/// Exact log survival function of a Poisson variable via a stable tail sum.
fn poisson_log_sf(mean: f64, k: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let log_pmf = |j: u64| -mean + j as f64 * mean.ln() - ln_gamma(j as f64 + 1.0);
    let mut terms = Vec::new();
    let mut j = k + 1;
    let mut best = f64::NEG_INFINITY;
    loop {
        let lp = log_pmf(j);
        best = best.max(lp);
        terms.push(lp);
        if lp < best - 40.0 || terms.len() > 4000 {
            break;
        }
        j += 1;
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[test]
fn poisson_concentration_inequality_holds_exactly() {
    // tail of a Poisson(eps lambda) above level delta lambda decays at least
    // at the entropy rate h(delta | eps), which diverges as eps shrinks
    let delta = 0.2;
    let lambda = 400.0;
    let mut last_rate = 0.0;
    for eps in [0.1, 0.05, 0.025, 0.0125] {
        let mean = eps * lambda;
        let level = (delta * lambda) as u64;
        let log_p = poisson_log_sf(mean, level);
        let rate = -log_p / lambda;
        let entropy = relaynet::rate::entropy_pair(delta, eps).unwrap();
        assert!(
            rate >= entropy - 1e-6,
            "eps {eps}: rate {rate} below entropy bound {entropy}"
        );
        assert!(rate > last_rate, "rate must diverge as eps shrinks");
        last_rate = rate;
        assert!(entropy > 0.0);
    }
}
