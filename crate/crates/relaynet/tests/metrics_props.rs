//! Property tests for the measure metrics.

use proptest::prelude::*;
use relaynet::measure::{
    modulus_of_continuity, prokhorov, sup_norm, total_variation, Partition, StepPath, Window,
};

fn unit_partition(n: usize) -> Partition {
    relaynet::spatial::partition_window(&Window::unit_interval(), 1.0 / n as f64).unwrap()
}

fn masses(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tv_is_a_metric(a in masses(5), b in masses(5), c in masses(5)) {
        let dab = total_variation(&a, &b).unwrap();
        let dba = total_variation(&b, &a).unwrap();
        let dac = total_variation(&a, &c).unwrap();
        let dbc = total_variation(&b, &c).unwrap();
        prop_assert!((dab - dba).abs() < 1e-15);
        prop_assert!(dab >= 0.0);
        prop_assert!(dac <= dab + dbc + 1e-12);
        prop_assert!(total_variation(&a, &a).unwrap() == 0.0);
        if dab == 0.0 {
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x == y));
        }
    }

    #[test]
    fn prokhorov_is_dominated_by_tv(a in masses(6), b in masses(6)) {
        let p = unit_partition(6);
        let tv = total_variation(&a, &b).unwrap();
        let dw = prokhorov(&a, &b, &p.centroids()).unwrap();
        prop_assert!(dw <= tv + 1e-8, "prokhorov {dw} exceeds tv {tv}");
    }

    #[test]
    fn sup_norm_dominates_every_time_slice(
        jumps in prop::collection::vec((0.0f64..1.0, 0.0f64..0.5, 0.0f64..0.5), 1..6),
        probes in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let mut times: Vec<f64> = jumps.iter().map(|j| j.0).collect();
        times.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut p1 = StepPath::zero(1.0, 2);
        let mut p2 = StepPath::zero(1.0, 2);
        let mut acc1 = vec![0.0; 2];
        let mut acc2 = vec![0.0; 2];
        for (k, &t) in times.iter().enumerate() {
            acc1[k % 2] += jumps[k].1;
            acc2[(k + 1) % 2] += jumps[k].2;
            p1.push(t, acc1.clone()).unwrap();
            p2.push(t, acc2.clone()).unwrap();
        }
        let sup = sup_norm(&p1, &p2).unwrap();
        for &t in &probes {
            let tv = total_variation(&p1.value_at(t), &p2.value_at(t)).unwrap();
            prop_assert!(sup >= tv - 1e-12);
        }
    }

    #[test]
    fn modulus_is_monotone_in_delta(
        jumps in prop::collection::vec((0.05f64..0.95, 0.01f64..0.4), 1..5),
    ) {
        let part = unit_partition(1);
        let mut times: Vec<f64> = jumps.iter().map(|j| j.0).collect();
        times.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut path = StepPath::zero(1.0, 1);
        let mut acc = 0.0;
        for (k, &t) in times.iter().enumerate() {
            acc += jumps[k].1;
            path.push(t, vec![acc]).unwrap();
        }
        // shrinking delta only enlarges the set of admissible partitions
        let deltas = [0.4, 0.2, 0.1, 0.05];
        let mut last = f64::INFINITY;
        for &d in &deltas {
            let w = modulus_of_continuity(&path, d, &part).unwrap();
            prop_assert!(w <= last + 1e-9, "w'({d}) = {w} above w' at coarser delta {last}");
            last = w;
        }
    }
}
