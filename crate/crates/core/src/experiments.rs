//! End-to-end experiment drivers shared by the CLI and the examples.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    matched_moment_families, oversmoothing_trajectory, Aggregator, EnergyScale, EnergyTrajectory, MultisetClasses,
};
use crate::autodiff::{Matrix, ParamStore, Tape};
use crate::config::DataSection;
use crate::data::{citation_paths, data_dir, load_citation, make_split, synthetic_citation, Split};
use crate::error::{Error, Result};
use crate::graph::{low_frequency_signal, random_geometric_graph, Graph};
use crate::layers::{bind, Mlp, Model, ModelConfig, Propagation};
use crate::loss::{loss, LossKind, Targets};
use crate::noise::{preset_spec, MaskSample, NoiseFamily, NoiseSpec, Preset};
use crate::train::{accuracy, train_node_classifier, Adam, Method, TrainConfig, TrainReport};

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Full-batch MLP classifier on fixed features; returns training accuracy.
pub fn train_feature_classifier(
    features: &Matrix,
    labels: &[usize],
    n_classes: usize,
    hidden: usize,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape {
            op: "feature classifier",
            lhs: features.dim(),
            rhs: (labels.len(), 1),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "mlp",
        &[features.ncols(), hidden, hidden, n_classes],
        &mut rng,
    )?;
    let targets = Targets::classes(labels, n_classes);
    let rows: Vec<usize> = (0..labels.len()).collect();
    let mut opt = Adam::new(&store, lr);
    for step in 0..steps {
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &store);
        let x = tape.constant(features.clone());
        let out = mlp.forward_with(&mut tape, x, &vars)?;
        let l = loss(&mut tape, LossKind::CrossEntropy, out, &targets, &rows)?;
        if !tape.scalar(l).is_finite() {
            return Err(Error::NonFinite(format!("classifier loss at step {step}")));
        }
        tape.backward(l)?.accumulate_into(&mut store);
        opt.step(&mut store)?;
    }
    let mut tape = Tape::new();
    let vars = bind(&mut tape, &store);
    let x = tape.constant(features.clone());
    let out = mlp.forward_with(&mut tape, x, &vars)?;
    Ok(accuracy(tape.value(out), labels, &rows))
}

/// Multiset classification: one class per multiset, one feature vector per class.
#[derive(Debug, Clone)]
pub struct MultisetTask {
    pub underlying: Vec<f64>,
    pub max_multiplicity: usize,
    /// Stochastic draws per feature vector.
    pub k: usize,
    pub noise: NoiseFamily,
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
}

impl Default for MultisetTask {
    fn default() -> Self {
        Self {
            underlying: vec![-4.0, -2.0, -1.0, 1.0, 2.0, 4.0],
            max_multiplicity: 2,
            k: 16,
            noise: NoiseFamily::Uniform { a: 0.0, b: 1.0 },
            hidden: 128,
            steps: 2000,
            lr: 1e-3,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultisetTaskResult {
    pub classes: usize,
    /// Exact accuracy ceiling for any classifier of the MEAN feature.
    pub mean_bound: f64,
    pub mean_accuracy: Vec<f64>,
    pub stochastic_accuracy: Vec<f64>,
}

pub fn run_multiset_task(task: &MultisetTask) -> Result<MultisetTaskResult> {
    let classes = MultisetClasses::enumerate(&task.underlying, task.max_multiplicity);
    let n = classes.len();
    let (distinct, total) = classes.mean_collision_bound()?;
    let labels: Vec<usize> = (0..n).collect();
    let mean_feat =
        Matrix::from_shape_vec((n, 1), classes.aggregate_features(Aggregator::Mean)).expect("one feature per class");
    let mut mean_accuracy = Vec::new();
    let mut stochastic_accuracy = Vec::new();
    for &seed in &task.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stoch = Matrix::from_shape_vec((n, task.k), classes.stochastic_features(&task.noise, task.k, &mut rng))
            .expect("k features per class");
        let acc_m = train_feature_classifier(&mean_feat, &labels, n, task.hidden, task.steps, task.lr, seed)?;
        let acc_s = train_feature_classifier(&stoch, &labels, n, task.hidden, task.steps, task.lr, seed)?;
        log::info!("seed {seed}: mean accuracy {acc_m:.4}, stochastic accuracy {acc_s:.4}");
        mean_accuracy.push(acc_m);
        stochastic_accuracy.push(acc_s);
    }
    Ok(MultisetTaskResult {
        classes: n,
        mean_bound: distinct as f64 / total as f64,
        mean_accuracy,
        stochastic_accuracy,
    })
}

/// Energy trajectories on a random geometric graph.
#[derive(Debug, Clone)]
pub struct OversmoothConfig {
    pub nodes: usize,
    pub radius: f64,
    pub layers: usize,
    pub runs: usize,
    /// Low-frequency eigenvectors mixed into the input signal.
    pub eigenvectors: usize,
    pub noise_mean: f64,
    pub noise_variance: f64,
    pub scale: EnergyScale,
    pub seed: u64,
}

impl Default for OversmoothConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            radius: 0.125,
            layers: 64,
            runs: 10,
            eigenvectors: 20,
            noise_mean: 0.5,
            noise_variance: 0.25,
            scale: EnergyScale::Absolute,
            seed: 0,
        }
    }
}

/// `(name, trajectory)` for the deterministic run followed by each
/// matched-moment noise family.
pub fn run_oversmooth(cfg: &OversmoothConfig) -> Result<Vec<(String, EnergyTrajectory)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = random_geometric_graph(cfg.nodes, cfg.radius, &mut rng)?;
    let signal = low_frequency_signal(&g, cfg.eigenvectors, &mut rng)?;
    let signal = signal.insert_axis(ndarray::Axis(1));
    let mut out = vec![(
        "deterministic".to_string(),
        oversmoothing_trajectory(&g, &signal, &NoiseSpec::delta(), cfg.layers, 1, cfg.seed, cfg.scale)?,
    )];
    for (name, family) in matched_moment_families(cfg.noise_mean, cfg.noise_variance)? {
        let spec = NoiseSpec::new(family);
        let t = oversmoothing_trajectory(&g, &signal, &spec, cfg.layers, cfg.runs, cfg.seed, cfg.scale)?;
        out.push((name.to_string(), t));
    }
    Ok(out)
}

/// Header and rows for layers `1..=L`: `layer, <name>_mean, <name>_std, …`.
pub fn trajectory_table(trajectories: &[(String, EnergyTrajectory)]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["layer".to_string()];
    for (name, _) in trajectories {
        header.push(format!("{name}_mean_energy"));
        header.push(format!("{name}_std_energy"));
    }
    let layers = trajectories.first().map_or(0, |(_, t)| t.layers());
    let rows = (1..=layers)
        .map(|l| {
            let mut row = vec![l.to_string()];
            for (_, t) in trajectories {
                row.push(format!("{:e}", t.mean[l]));
                row.push(format!("{:e}", t.std[l]));
            }
            row
        })
        .collect();
    (header, rows)
}

/// Loads the configured dataset (or generates the synthetic stand-in) and its split.
pub fn prepare_data(data: &DataSection, split_seed: u64) -> Result<(Graph, Split)> {
    let g = if data.synthetic {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        synthetic_citation(&mut rng)?
    } else {
        let dir = data.dir.clone().unwrap_or_else(data_dir);
        let (content, cites) = citation_paths(&dir, &data.dataset).ok_or_else(|| {
            Error::Config(format!(
                "dataset files {0}.content / {0}.cites not found in {1} (set {2} or data.dir, or data.synthetic = true)",
                data.dataset,
                dir.display(),
                crate::data::DATA_DIR_ENV
            ))
        })?;
        load_citation(&content, &cites, data.row_normalize)?.graph
    };
    let split = make_split(&g, data.n_train, data.n_val, data.n_test, data.split, split_seed)?;
    Ok((g, split))
}

/// Trains `runs` models with seeds `base_seed + run`, in run order.
pub fn run_seeds(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    g: &Graph,
    split: &Split,
    method: &Method,
    runs: usize,
) -> Result<Vec<TrainReport>> {
    (0..runs)
        .map(|r| {
            let c = TrainConfig {
                seed: cfg.seed + r as u64,
                ..cfg.clone()
            };
            train_node_classifier(&c, model_cfg, g, split, method).map(|(rep, _)| rep)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSweepRow {
    pub depth: usize,
    pub method: &'static str,
    pub run: usize,
    pub test_accuracy: f64,
}

/// Test accuracy versus depth for dropout and Normal(1, 1) aggregation noise.
pub fn depth_sweep(
    g: &Graph,
    split: &Split,
    depths: &[usize],
    hidden: usize,
    cfg: &TrainConfig,
    runs: usize,
) -> Result<Vec<DepthSweepRow>> {
    let methods = [
        (
            "dropout",
            preset_spec(Preset::Dropout, NoiseFamily::Bernoulli { p_drop: 0.5 })?,
        ),
        (
            "stag_normal",
            preset_spec(Preset::StagFull, NoiseFamily::Normal { mu: 1.0, sigma: 1.0 })?,
        ),
    ];
    let mut rows = Vec::new();
    for &depth in depths {
        let mc =
            ModelConfig::new(crate::layers::LayerKind::Gcn, g.n_features(), g.num_classes(), depth).with_hidden(hidden);
        for (name, spec) in &methods {
            let reports = run_seeds(cfg, &mc, g, split, &Method::Noise(*spec), runs)?;
            for (run, r) in reports.iter().enumerate() {
                log::info!("depth {depth} {name} run {run}: test {:.4}", r.test_accuracy);
                rows.push(DepthSweepRow {
                    depth,
                    method: name,
                    run,
                    test_accuracy: r.test_accuracy,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchResult {
    /// Median seconds per deterministic training step.
    pub deterministic: f64,
    /// Median seconds per stochastic training step, mask sampling included.
    pub stochastic: f64,
}

impl BenchResult {
    pub fn ratio(&self) -> f64 {
        self.stochastic / self.deterministic
    }
}

#[allow(clippy::too_many_arguments)]
fn timed_step(
    model: &mut Model,
    opt: &mut Adam,
    g: &Graph,
    prop: &Propagation,
    spec: &NoiseSpec,
    targets: &Targets,
    rows: &[usize],
    rng: &mut ChaCha8Rng,
    mask: &mut Option<MaskSample>,
) -> Result<f64> {
    let start = Instant::now();
    let mut tape = Tape::new();
    let vars = bind(&mut tape, model.params());
    let x = tape.constant(g.features().clone());
    model.resample_mask(g, spec, rng, mask)?;
    let w = model.edge_weights(prop, spec, mask.as_ref());
    let out = model.forward_with(&mut tape, prop, x, &vars, &w)?;
    let l = loss(&mut tape, LossKind::CrossEntropy, out, targets, rows)?;
    tape.backward(l)?.accumulate_into(model.params_mut());
    opt.step(model.params_mut())?;
    Ok(start.elapsed().as_secs_f64())
}

/// Per-iteration wall time of deterministic versus noisy training steps.
/// Iterations alternate between the two to share machine conditions.
pub fn bench(
    g: &Graph,
    model_cfg: &ModelConfig,
    spec: &NoiseSpec,
    rows: &[usize],
    iters: usize,
    seed: u64,
) -> Result<BenchResult> {
    if iters == 0 {
        return Err(Error::InvalidArgument("bench needs at least one iteration".into()));
    }
    let labels = g
        .labels()
        .ok_or_else(|| Error::InvalidArgument("bench needs labels".into()))?;
    let targets = Targets::classes(labels, model_cfg.out_dim);
    let prop = Propagation::new(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut det = Model::new(model_cfg, &mut rng)?;
    let mut sto = det.clone();
    let mut det_opt = Adam::new(det.params(), 1e-3);
    let mut sto_opt = Adam::new(sto.params(), 1e-3);
    let delta = NoiseSpec::delta();
    let (mut td, mut ts) = (Vec::new(), Vec::new());
    let (mut det_mask, mut sto_mask) = (None, None);
    for i in 0..iters + 1 {
        let a = timed_step(
            &mut det,
            &mut det_opt,
            g,
            &prop,
            &delta,
            &targets,
            rows,
            &mut rng,
            &mut det_mask,
        )?;
        let b = timed_step(
            &mut sto,
            &mut sto_opt,
            g,
            &prop,
            spec,
            &targets,
            rows,
            &mut rng,
            &mut sto_mask,
        )?;
        if i > 0 {
            td.push(a);
            ts.push(b);
        }
    }
    Ok(BenchResult {
        deterministic: median(&td),
        stochastic: median(&ts),
    })
}
