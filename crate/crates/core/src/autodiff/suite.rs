//! Finite-difference checks over every tape primitive and whole models.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finite_difference_check, EdgeWeights, GradCheckReport, ParamStore, Tape, Var};
use crate::error::Result;
use crate::graph::Graph;
use crate::layers::{bind, bind_frozen, sample_stream, LayerKind, Model, ModelConfig, Propagation};
use crate::loss::{loss, LossKind, Targets};
use crate::noise::{preset_spec, NoiseFamily, Preset};
use crate::vi::{Granularity, ViConfig, ViModel, PRIOR_MEAN};

/// Central-difference step used by the suite.
pub const SUITE_EPS: f64 = 1e-6;

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for kinked primitives.
fn off_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let m: f64 = rng.random_range(0.2..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// `Σ (v ⊙ R)` for a fixed pseudo-random `R` of `v`'s shape.
fn project(tape: &mut Tape, v: Var) -> Result<Var> {
    let (r, c) = tape.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64((r * 1000 + c) as u64);
    let weights = tape.constant(uniform(r, c, -1.0, 1.0, &mut rng));
    let p = tape.mul(v, weights)?;
    Ok(tape.sum(p))
}

fn toy_graph(rng: &mut ChaCha8Rng) -> Result<Graph> {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (1, 4)];
    let features = uniform(6, 5, -1.0, 1.0, rng);
    Graph::undirected(&edges, features, Some(vec![0, 1, 2, 0, 1, 2]))
}

type Build = Box<dyn FnMut(&mut Tape, &ParamStore) -> Result<Var>>;

fn primitive_cases(rng: &mut ChaCha8Rng) -> Result<Vec<(String, ParamStore, Build)>> {
    let g = toy_graph(rng)?;
    let pattern = Arc::clone(g.augmented());
    let nnz = pattern.nnz();
    let coef: Arc<[f64]> = (0..nnz).map(|_| rng.random_range(0.1..1.0)).collect();
    let fixed = Arc::new(uniform(nnz, 3, 0.0, 2.0, rng));
    let rows_idx: Arc<[usize]> = vec![4, 0, 4, 2].into();
    let labels: Arc<[usize]> = vec![1, 0, 2, 2].into();

    let mut cases: Vec<(String, ParamStore, Build)> = Vec::new();
    let mut unary = |name: &str, a: Array2<f64>, f: fn(&mut Tape, Var) -> Result<Var>| {
        let mut s = ParamStore::new();
        let id = s.add("a", a);
        let build: Build = Box::new(move |t, st| {
            let v = t.param(st, id);
            let out = f(t, v)?;
            project(t, out)
        });
        cases.push((name.to_string(), s, build));
    };
    unary("relu", off_zero(4, 3, rng), |t, a| Ok(t.relu(a)));
    unary("exp", uniform(4, 3, -1.0, 1.0, rng), |t, a| Ok(t.exp(a)));
    unary("sigmoid", uniform(4, 3, -2.0, 2.0, rng), |t, a| Ok(t.sigmoid(a)));
    unary("log", uniform(4, 3, 0.5, 2.0, rng), |t, a| Ok(t.log(a)));
    unary("scale", uniform(4, 3, -1.0, 1.0, rng), |t, a| Ok(t.scale(a, -1.7)));
    unary("add_scalar", uniform(4, 3, -1.0, 1.0, rng), |t, a| {
        Ok(t.add_scalar(a, 0.3))
    });
    unary("row_sum", uniform(4, 3, -1.0, 1.0, rng), |t, a| Ok(t.row_sum(a)));
    unary("col_sum", uniform(4, 3, -1.0, 1.0, rng), |t, a| Ok(t.col_sum(a)));
    unary("sum", uniform(4, 3, -1.0, 1.0, rng), |t, a| {
        let s = t.sum(a);
        t.mul(s, s)
    });
    unary("mean", uniform(4, 3, -1.0, 1.0, rng), |t, a| {
        let m = t.mean(a);
        t.mul(m, m)
    });
    unary("log_softmax_rows", uniform(4, 3, -2.0, 2.0, rng), |t, a| {
        Ok(t.log_softmax_rows(a))
    });
    unary("broadcast_row", uniform(1, 3, -1.0, 1.0, rng), |t, a| {
        t.broadcast(a, 4, 3)
    });
    unary("broadcast_scalar", uniform(1, 1, -1.0, 1.0, rng), |t, a| {
        t.broadcast(a, 4, 3)
    });
    unary("slice_cols", uniform(4, 5, -1.0, 1.0, rng), |t, a| {
        t.slice_cols(a, 1, 4)
    });
    unary("gather_rows", uniform(5, 3, -1.0, 1.0, rng), |t, a| {
        let idx: Arc<[usize]> = vec![4, 0, 4, 2].into();
        t.gather_rows(a, &idx)
    });
    unary("scatter_add_rows", uniform(4, 3, -1.0, 1.0, rng), |t, a| {
        let idx: Arc<[usize]> = vec![1, 3, 1, 0].into();
        t.scatter_add_rows(a, &idx, 5)
    });

    let mut binary = |name: &str, a: Array2<f64>, b: Array2<f64>, f: fn(&mut Tape, Var, Var) -> Result<Var>| {
        let mut s = ParamStore::new();
        let ia = s.add("a", a);
        let ib = s.add("b", b);
        let build: Build = Box::new(move |t, st| {
            let (va, vb) = (t.param(st, ia), t.param(st, ib));
            let out = f(t, va, vb)?;
            project(t, out)
        });
        cases.push((name.to_string(), s, build));
    };
    binary(
        "matmul",
        uniform(4, 3, -1.0, 1.0, rng),
        uniform(3, 5, -1.0, 1.0, rng),
        |t, a, b| t.matmul(a, b),
    );
    binary(
        "add",
        uniform(4, 3, -1.0, 1.0, rng),
        uniform(4, 3, -1.0, 1.0, rng),
        |t, a, b| t.add(a, b),
    );
    binary(
        "sub",
        uniform(4, 3, -1.0, 1.0, rng),
        uniform(4, 3, -1.0, 1.0, rng),
        |t, a, b| t.sub(a, b),
    );
    binary(
        "mul",
        uniform(4, 3, -1.0, 1.0, rng),
        uniform(4, 3, -1.0, 1.0, rng),
        |t, a, b| t.mul(a, b),
    );
    binary(
        "add_row",
        uniform(4, 3, -1.0, 1.0, rng),
        uniform(1, 3, -1.0, 1.0, rng),
        |t, a, b| t.add_row(a, b),
    );
    binary(
        "concat_rows",
        uniform(2, 3, -1.0, 1.0, rng),
        uniform(3, 3, -1.0, 1.0, rng),
        |t, a, b| t.concat_rows(&[a, b, a]),
    );
    binary(
        "concat_cols",
        uniform(4, 2, -1.0, 1.0, rng),
        uniform(4, 3, -1.0, 1.0, rng),
        |t, a, b| t.concat_cols(&[b, a]),
    );

    {
        let mut s = ParamStore::new();
        let id = s.add("logits", uniform(6, 3, -2.0, 2.0, rng));
        let (ri, li) = (Arc::clone(&rows_idx), Arc::clone(&labels));
        let build: Build = Box::new(move |t, st| {
            let v = t.param(st, id);
            t.cross_entropy_rows(v, &ri, &li)
        });
        cases.push(("cross_entropy_rows".into(), s, build));
    }

    for (name, shared) in [("edge_aggregate_ones", None), ("edge_aggregate_fixed", Some(fixed))] {
        let mut s = ParamStore::new();
        let id = s.add("x", uniform(6, 3, -1.0, 1.0, rng));
        let (p, c) = (Arc::clone(&pattern), Arc::clone(&coef));
        let build: Build = Box::new(move |t, st| {
            let x = t.param(st, id);
            let w = shared.clone().map_or(EdgeWeights::Ones, EdgeWeights::Fixed);
            let out = t.edge_aggregate(&p, Some(&c), w, x)?;
            project(t, out)
        });
        cases.push((name.into(), s, build));
    }
    for width in [1, 3] {
        let mut s = ParamStore::new();
        let ix = s.add("x", uniform(6, 3, -1.0, 1.0, rng));
        let iw = s.add("w", uniform(nnz, width, 0.0, 2.0, rng));
        let (p, c) = (Arc::clone(&pattern), Arc::clone(&coef));
        let build: Build = Box::new(move |t, st| {
            let x = t.param(st, ix);
            let w = t.param(st, iw);
            let out = t.edge_aggregate(&p, Some(&c), EdgeWeights::Var(w), x)?;
            project(t, out)
        });
        cases.push((format!("edge_aggregate_var_w{width}"), s, build));
    }
    Ok(cases)
}

/// Runs the full suite and returns one report per case.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, mut store, build) in primitive_cases(&mut rng)? {
        let report = finite_difference_check(&mut store, SUITE_EPS, 1.0, seed, build)?;
        out.push((name, report));
    }

    let g = toy_graph(&mut rng)?;
    let prop = Propagation::new(&g);
    let labels = g.labels().expect("toy labels").to_vec();
    let targets = Targets::classes(&labels, 3);
    let rows: Vec<usize> = vec![0, 1, 2, 4];
    for (kind, preset, family) in [
        (
            LayerKind::Gcn,
            Preset::StagFull,
            NoiseFamily::Normal { mu: 1.0, sigma: 0.5 },
        ),
        (LayerKind::Gcn, Preset::Gdc, NoiseFamily::Bernoulli { p_drop: 0.3 }),
        (
            LayerKind::SageMean,
            Preset::Dropout,
            NoiseFamily::Bernoulli { p_drop: 0.3 },
        ),
        (
            LayerKind::Gin,
            Preset::StagFull,
            NoiseFamily::Uniform { a: 0.5, b: 1.5 },
        ),
    ] {
        let cfg = ModelConfig::new(kind, g.n_features(), 3, 2).with_hidden(4);
        let model = Model::new(&cfg, &mut rng)?;
        let spec = preset_spec(preset, family)?;
        let mask = model.sample_mask(&g, &spec, &mut rng)?;
        let weights = model.edge_weights(&prop, &spec, mask.as_ref());
        let mut store = model.params().clone();
        let (gr, pr, tg, rw) = (g.clone(), prop.clone(), targets.clone(), rows.clone());
        let report = finite_difference_check(&mut store, SUITE_EPS, 1.0, seed, move |t, st| {
            let vars = bind(t, st);
            let x = t.constant(gr.features().clone());
            let h = model.forward_with(t, &pr, x, &vars, &weights)?;
            loss(t, LossKind::CrossEntropy, h, &tg, &rw)
        })?;
        out.push((format!("model_{}_{}", kind.name(), preset.name()), report));
    }

    for gran in Granularity::ALL {
        let cfg = ModelConfig::new(LayerKind::Gcn, g.n_features(), 3, 2).with_hidden(4);
        let model = Model::new(&cfg, &mut rng)?;
        let mut vc = ViConfig::new(gran);
        vc.encoder_hidden = 6;
        // Starting at the prior keeps the KL, and so the rounding error of
        // the differenced objective, small next to the gradients.
        vc.mu0 = PRIOR_MEAN;
        vc.log_sigma0 = vc.sigma_prior.ln();
        let mut vm = ViModel::new(model, &vc, &g, &mut rng)?;
        if gran.is_amortized() {
            // The amortizer head starts almost flat; a generic point gives
            // the encoder gradients a measurable size.
            let ids: Vec<_> = vm.posterior.params().ids().collect();
            for id in ids {
                let v = vm.posterior.params_mut().value_mut(id);
                v.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            }
        }
        for part in ["posterior", "model"] {
            let mut store = if part == "posterior" {
                vm.posterior.params().clone()
            } else {
                vm.model.params().clone()
            };
            let (vm, gr, pr, tg, rw) = (vm.clone(), g.clone(), prop.clone(), targets.clone(), rows.clone());
            let report = finite_difference_check(&mut store, SUITE_EPS, 1.0, seed, move |t, st| {
                let (mv, qv) = if part == "posterior" {
                    (bind_frozen(t, vm.model.params()), bind(t, st))
                } else {
                    (bind(t, st), bind_frozen(t, vm.posterior.params()))
                };
                let mut draw_rng = sample_stream(seed, 7);
                let terms = vm.elbo_on_tape(
                    t,
                    &mv,
                    &qv,
                    &gr,
                    &pr,
                    LossKind::CrossEntropy,
                    &tg,
                    &rw,
                    2,
                    &mut draw_rng,
                )?;
                Ok(t.scale(terms.elbo, -1.0))
            })?;
            out.push((format!("elbo_{}_{part}", gran.name()), report));
        }
    }
    Ok(out)
}
