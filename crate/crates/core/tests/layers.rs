use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stag::graph::Graph;
use stag::layers::{softmax_rows, LayerKind, Model, ModelConfig, OutputKind, Propagation};
use stag::noise::{preset_spec, NoiseFamily, NoiseSpec, Preset};

fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> (Vec<(usize, usize)>, Array2<f64>) {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    let x = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
    (edges, x)
}

fn kind_strategy() -> impl Strategy<Value = LayerKind> {
    prop_oneof![Just(LayerKind::Gcn), Just(LayerKind::SageMean), Just(LayerKind::Gin)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn deterministic_models_are_permutation_equivariant(kind in kind_strategy(), n in 3usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (edges, x) = random_graph(n, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let g = Graph::undirected(&edges, x.clone(), None).unwrap();
        let pe: Vec<(usize, usize)> = edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let mut px = Array2::zeros(x.raw_dim());
        for (i, &p) in perm.iter().enumerate() {
            px.row_mut(p).assign(&x.row(i));
        }
        let pg = Graph::undirected(&pe, px, None).unwrap();

        let cfg = ModelConfig::new(kind, 4, 3, 2).with_hidden(5);
        let model = Model::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
        let delta = NoiseSpec::delta();
        let out = model.forward(&g, &Propagation::new(&g), &delta, None).unwrap();
        let pout = model.forward(&pg, &Propagation::new(&pg), &delta, None).unwrap();
        for i in 0..n {
            for k in 0..3 {
                prop_assert!((out[[i, k]] - pout[[perm[i], k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginal_probabilities_are_distributions(kind in kind_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (edges, x) = random_graph(8, &mut rng);
        let g = Graph::undirected(&edges, x, None).unwrap();
        let model = Model::new(&ModelConfig::new(kind, 4, 3, 2).with_hidden(6), &mut rng).unwrap();
        let spec = preset_spec(Preset::StagFull, NoiseFamily::Normal { mu: 1.0, sigma: 0.5 }).unwrap();
        let p = model
            .predict_marginal(&g, &Propagation::new(&g), &spec, 5, seed, OutputKind::Classification)
            .unwrap();
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn delta_marginal_is_sample_count_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (edges, x) = random_graph(10, &mut rng);
    let g = Graph::undirected(&edges, x, None).unwrap();
    let prop = Propagation::new(&g);
    let model = Model::new(&ModelConfig::new(LayerKind::Gcn, 4, 3, 2).with_hidden(8), &mut rng).unwrap();
    let delta = NoiseSpec::delta();
    let one = model
        .predict_marginal(&g, &prop, &delta, 1, 0, OutputKind::Classification)
        .unwrap();
    let many = model
        .predict_marginal(&g, &prop, &delta, 32, 7, OutputKind::Classification)
        .unwrap();
    let det = softmax_rows(&model.forward(&g, &prop, &delta, None).unwrap());
    for ((a, b), c) in one.iter().zip(many.iter()).zip(det.iter()) {
        assert_eq!(a.to_bits(), c.to_bits());
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn marginal_prediction_is_seed_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (edges, x) = random_graph(9, &mut rng);
    let g = Graph::undirected(&edges, x, None).unwrap();
    let prop = Propagation::new(&g);
    let model = Model::new(&ModelConfig::new(LayerKind::SageMean, 4, 2, 3).with_hidden(4), &mut rng).unwrap();
    let spec = preset_spec(Preset::Dropout, NoiseFamily::Bernoulli { p_drop: 0.5 }).unwrap();
    let a = model
        .predict_marginal(&g, &prop, &spec, 8, 11, OutputKind::Regression)
        .unwrap();
    let b = model
        .predict_marginal(&g, &prop, &spec, 8, 11, OutputKind::Regression)
        .unwrap();
    let c = model
        .predict_marginal(&g, &prop, &spec, 8, 12, OutputKind::Regression)
        .unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn shape_mismatch_is_an_error() {
    let g = Graph::undirected(&[(0, 1)], Array2::zeros((2, 3)), None).unwrap();
    let model = Model::new(
        &ModelConfig::new(LayerKind::Gcn, 5, 2, 2),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(model
        .forward(&g, &Propagation::new(&g), &NoiseSpec::delta(), None)
        .is_err());
}
