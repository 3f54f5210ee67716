use std::collections::HashSet;

use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stag::analysis::{
    dirichlet_energy, dirichlet_energy_pairwise, expected_stochastic_aggregate, matched_moment_families,
    oversmoothing_trajectory, power_sum_equal, uniform_exp_sum_closed_form, uniform_exp_sum_numerator, Aggregator,
    EnergyScale, Multiset, MultisetClasses, Transform,
};
use stag::graph::{random_geometric_graph, Graph, EIGEN_MAX_SWEEPS, EIGEN_TOLERANCE};
use stag::linalg::symmetric_eigen;
use stag::noise::{NoiseFamily, NoiseSpec};

fn nonzero_multiset() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((1i32..=9, any::<bool>()), 1..=5).prop_map(|v| {
        v.into_iter()
            .map(|(m, neg)| if neg { -m as f64 } else { m as f64 })
            .collect()
    })
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #[test]
    fn power_sums_decide_multiset_equality(x in nonzero_multiset(), y in nonzero_multiset(), seed in any::<u64>()) {
        let n = x.len().max(y.len());
        let same = power_sum_equal(&Multiset::new(x.clone()), &Multiset::new(y.clone()), n).unwrap();
        prop_assert_eq!(same, sorted(x.clone()) == sorted(y));

        let mut shuffled = x.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(power_sum_equal(&Multiset::new(x.clone()), &Multiset::new(shuffled), x.len()).unwrap());
    }

    #[test]
    fn aggregators_are_permutation_invariant(x in prop::collection::vec(-10.0f64..10.0, 1..8), seed in any::<u64>()) {
        let mut y = x.clone();
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for rho in Aggregator::ALL {
            let (a, b) = (rho.apply(&x), rho.apply(&y));
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            if matches!(rho, Aggregator::Mean | Aggregator::Max | Aggregator::Min) {
                prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_preserves_cardinality(x in prop::collection::vec(-5.0f64..5.0, 0..10), seed in any::<u64>()) {
        let m = Multiset::new(x.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = m.perturb(&NoiseFamily::Uniform { a: 0.0, b: 1.0 }, &mut rng);
        prop_assert_eq!(p.len(), m.len());
        for (z, v) in p.elements().iter().zip(&x) {
            prop_assert!(z.abs() <= v.abs());
        }
        prop_assert!(m.perturb(&NoiseFamily::Delta, &mut rng).eq_up_to_permutation(&m));
    }
}

#[test]
fn power_sum_examples() {
    let m = |v: &[f64]| Multiset::new(v.to_vec());
    assert!(!power_sum_equal(&m(&[2.0, 2.0, 5.0]), &m(&[1.0, 4.0, 4.0]), 3).unwrap());
    assert!(!power_sum_equal(&m(&[2.0, 2.0]), &m(&[4.0]), 2).unwrap());
    assert!(power_sum_equal(&m(&[0.0, 1.0]), &m(&[1.0]), 2).is_err());
    assert!(power_sum_equal(&m(&[1.0, 2.0]), &m(&[2.0, 1.0]), 1).is_err());
}

#[test]
fn uniform_sum_closed_form() {
    let x = Multiset::new(vec![2.0, 2.0]);
    let expected = ((2f64.exp() - 1.0) / 2.0).powi(2);
    assert!((uniform_exp_sum_closed_form(&x).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 10.2050).abs() < 1e-4);
    assert!((uniform_exp_sum_numerator(&x) - (2f64.exp() - 1.0).powi(2)).abs() < 1e-12);
    assert!(uniform_exp_sum_closed_form(&Multiset::new(vec![0.0, 4.0])).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let q = NoiseFamily::Uniform { a: 0.0, b: 1.0 };
    let mc = expected_stochastic_aggregate(&x, Aggregator::Sum, Transform::Exp, &q, 1_000_000, &mut rng).unwrap();
    assert!((mc.mean - expected).abs() < 3.0 * mc.std_error, "{mc:?}");
    let y = Multiset::new(vec![0.0, 4.0]);
    let my = expected_stochastic_aggregate(&y, Aggregator::Sum, Transform::Exp, &q, 1_000_000, &mut rng).unwrap();
    assert!((my.mean - (4f64.exp() - 1.0) / 4.0).abs() < 3.0 * my.std_error);
    assert!(mc.separation(&my) > 5.0);
}

#[test]
fn lemma_one_witness() {
    // E[1{z < 0.5}] separates Uniform(0, 1) from Uniform(0.5, 1.5).
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let frac = |q: NoiseFamily, rng: &mut ChaCha8Rng| (0..n).filter(|_| q.sample(rng) < 0.5).count() as f64 / n as f64;
    let ex = frac(NoiseFamily::Uniform { a: 0.0, b: 1.0 }, &mut rng);
    let ey = frac(NoiseFamily::Uniform { a: 0.5, b: 1.5 }, &mut rng);
    let se = (0.25 / n as f64).sqrt();
    assert!((ex - 0.5).abs() < 3.0 * se);
    assert_eq!(ey, 0.0);
}

#[test]
fn class_enumeration_counts() {
    let u = [-4.0, -2.0, -1.0, 1.0, 2.0, 4.0];
    assert_eq!(MultisetClasses::enumerate(&u, 4).len(), 15624);
    let classes = MultisetClasses::enumerate(&u, 2);
    assert_eq!(classes.len(), 728);
    let distinct: HashSet<i64> = classes
        .aggregate_features(Aggregator::Mean)
        .iter()
        .map(|m| (m * 1e9).round() as i64)
        .collect();
    let (d, total) = classes.mean_collision_bound().unwrap();
    assert_eq!((d, total), (distinct.len(), 728));
    let sets: HashSet<Vec<u64>> = (0..classes.len())
        .map(|c| {
            sorted(classes.multiset(c).elements().to_vec())
                .iter()
                .map(|v| v.to_bits())
                .collect()
        })
        .collect();
    assert_eq!(sets.len(), 728);
}

#[test]
fn energy_examples() {
    let g = Graph::undirected(&[(0, 1)], Array2::zeros((2, 1)), None).unwrap();
    let x = Array2::from_shape_vec((2, 1), vec![1.0, 0.0]).unwrap();
    assert!((dirichlet_energy(&g, &x.view()).unwrap() - 0.5).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_geometric_graph(30, 0.35, &mut rng).unwrap();
    let f: Vec<f64> = (0..30).map(|i| 2.0 * ((1 + g.degree(i)) as f64).sqrt()).collect();
    let fx = Array2::from_shape_vec((30, 1), f.clone()).unwrap();
    assert!(dirichlet_energy(&g, &fx.view()).unwrap().abs() < 1e-10);
    assert!(dirichlet_energy_pairwise(&g, &f).unwrap().abs() < 1e-10);

    let eig = symmetric_eigen(&g.normalized_laplacian().to_dense(), EIGEN_TOLERANCE, EIGEN_MAX_SWEEPS).unwrap();
    for k in [1, 5, 17] {
        let v = eig.vectors.column(k).to_owned().insert_axis(ndarray::Axis(1));
        let e = dirichlet_energy(&g, &v.view()).unwrap();
        assert!((e - eig.values[k]).abs() < 1e-9);
        let pw = dirichlet_energy_pairwise(&g, v.as_slice().unwrap()).unwrap();
        assert!((e - pw).abs() < 1e-10);
    }
}

#[test]
fn trajectory_starts_at_signal_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_geometric_graph(40, 0.3, &mut rng).unwrap();
    let signal = Array2::from_shape_fn((40, 1), |(i, _)| (i as f64).sin());
    let e0 = dirichlet_energy(&g, &signal.view()).unwrap();
    for (_, q) in matched_moment_families(0.5, 0.25).unwrap() {
        assert!((q.mean() - 0.5).abs() < 1e-12 && (q.variance() - 0.25).abs() < 1e-12);
        let t = oversmoothing_trajectory(&g, &signal, &NoiseSpec::new(q), 5, 3, 1, EnergyScale::Absolute).unwrap();
        assert_eq!(t.mean[0], e0);
        assert_eq!(t.layers(), 5);
        assert!(t.std.iter().all(|&s| s >= 0.0));
    }
    let det = oversmoothing_trajectory(&g, &signal, &NoiseSpec::delta(), 20, 1, 0, EnergyScale::Absolute).unwrap();
    assert!(det.mean.windows(2).all(|w| w[1] <= w[0]));
}
