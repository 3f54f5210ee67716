//! GCN, GraphSAGE-mean and GIN stacks with per-channel stochastic aggregation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_exp, EdgeWeights, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Csr, Graph};
use crate::noise::{renormalize_rows, resample_mask, sample_mask, MaskSample, NoiseSpec};

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 128;
/// Default number of Monte-Carlo samples at inference.
pub const DEFAULT_MC_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Gcn,
    SageMean,
    Gin,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Gcn => "gcn",
            LayerKind::SageMean => "sage_mean",
            LayerKind::Gin => "gin",
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(LayerKind::Gcn),
            "sage" | "sage_mean" => Ok(LayerKind::SageMean),
            "gin" => Ok(LayerKind::Gin),
            _ => Err(Error::Config(format!("unknown layer kind '{s}' (gcn, sage_mean, gin)"))),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Aggregation coefficients of one graph, aligned with its self-looped pattern.
#[derive(Debug, Clone)]
pub struct Propagation {
    pattern: Arc<Csr>,
    gcn: Arc<[f64]>,
    mean: Arc<[f64]>,
    sum: Arc<[f64]>,
}

impl Propagation {
    pub fn new(g: &Graph) -> Self {
        let pattern = Arc::clone(g.augmented());
        let gcn: Arc<[f64]> = g.sym_normalized_adjacency().values().into();
        let rows = pattern.entry_rows();
        let cols = pattern.indices();
        let sum: Arc<[f64]> = rows
            .iter()
            .zip(cols)
            .map(|(r, c)| if r == c { 0.0 } else { 1.0 })
            .collect();
        let mean: Arc<[f64]> = rows
            .iter()
            .zip(cols)
            .map(|(&r, &c)| if r == c { 0.0 } else { 1.0 / g.degree(r) as f64 })
            .collect();
        Self {
            pattern,
            gcn,
            mean,
            sum,
        }
    }

    pub fn pattern(&self) -> &Arc<Csr> {
        &self.pattern
    }

    pub fn n_nodes(&self) -> usize {
        self.pattern.n_rows()
    }

    /// Per-entry coefficients used by `kind`. Self-loop entries are zero for
    /// SAGE and GIN, whose self term bypasses the mask.
    pub fn coef(&self, kind: LayerKind) -> &Arc<[f64]> {
        match kind {
            LayerKind::Gcn => &self.gcn,
            LayerKind::SageMean => &self.mean,
            LayerKind::Gin => &self.sum,
        }
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..=limit))
}

/// Binds every parameter of `store` onto `tape`, indexed by `ParamId::index`.
pub fn bind(tape: &mut Tape, store: &ParamStore) -> Vec<Var> {
    store.ids().map(|id| tape.param(store, id)).collect()
}

/// Binds parameters as constants, for inference without gradients.
pub fn bind_frozen(tape: &mut Tape, store: &ParamStore) -> Vec<Var> {
    store.ids().map(|id| tape.constant(store.value(id).clone())).collect()
}

/// Fully connected network with ReLU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad MLP dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wt = store.add(format!("{prefix}.{i}.weight"), glorot(w[0], w[1], rng));
                let b = store.add(format!("{prefix}.{i}.bias"), Array2::zeros((1, w[1])));
                (wt, b)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn weights(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().map(|&(w, _)| w)
    }

    pub fn forward_with(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, vars[w.index()])?;
            h = tape.add_row(z, vars[b.index()])?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    weight: ParamId,
    bias: Option<ParamId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub depth: usize,
    /// Target width of a sum-pool readout head, for graph-level tasks.
    pub readout: Option<usize>,
}

impl ModelConfig {
    pub fn new(kind: LayerKind, in_dim: usize, out_dim: usize, depth: usize) -> Self {
        Self {
            kind,
            in_dim,
            hidden: DEFAULT_HIDDEN,
            out_dim,
            depth,
            readout: None,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }
}

/// How marginal predictions combine samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// Average of per-sample softmax probabilities.
    Classification,
    /// Average of raw outputs.
    Regression,
}

/// RNG for Monte-Carlo sample `index` of a run seeded with `seed`.
pub fn sample_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone)]
pub struct Model {
    specs: Vec<LayerSpec>,
    layer_params: Vec<LayerParams>,
    readout: Option<Mlp>,
    params: ParamStore,
}

impl Model {
    /// Uniform stack: ReLU on hidden layers, identity on the last.
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        if cfg.depth == 0 {
            return Err(Error::InvalidArgument("model depth must be at least 1".into()));
        }
        let specs = (0..cfg.depth)
            .map(|l| LayerSpec {
                kind: cfg.kind,
                in_dim: if l == 0 { cfg.in_dim } else { cfg.hidden },
                out_dim: if l + 1 == cfg.depth { cfg.out_dim } else { cfg.hidden },
                activation: if l + 1 == cfg.depth {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Self::from_layers(specs, cfg.readout, rng)
    }

    pub fn from_layers<R: Rng + ?Sized>(specs: Vec<LayerSpec>, readout: Option<usize>, rng: &mut R) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for (l, pair) in specs.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape {
                    op: "model layers",
                    lhs: (l, pair[0].out_dim),
                    rhs: (l + 1, pair[1].in_dim),
                });
            }
        }
        if let Some(s) = specs.iter().find(|s| s.in_dim == 0 || s.out_dim == 0) {
            return Err(Error::InvalidArgument(format!("zero-width layer {s:?}")));
        }
        let mut params = ParamStore::new();
        let layer_params = specs
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let fan_in = match s.kind {
                    LayerKind::SageMean => 2 * s.in_dim,
                    _ => s.in_dim,
                };
                let weight = params.add(format!("layer{l}.weight"), glorot(fan_in, s.out_dim, rng));
                let bias = (s.kind == LayerKind::Gin)
                    .then(|| params.add(format!("layer{l}.bias"), Array2::zeros((1, s.out_dim))));
                LayerParams { weight, bias }
            })
            .collect();
        let last = specs.last().expect("non-empty").out_dim;
        let readout = readout
            .map(|target| Mlp::new(&mut params, "readout", &[last, DEFAULT_HIDDEN, target], rng))
            .transpose()?;
        Ok(Self {
            specs,
            layer_params,
            readout,
            params,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn depth(&self) -> usize {
        self.specs.len()
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs.last().expect("non-empty").out_dim
    }

    /// Input width of every layer, i.e. the channel axis of its mask.
    pub fn mask_widths(&self) -> Vec<usize> {
        self.specs.iter().map(|s| s.in_dim).collect()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layer_weight(&self, l: usize) -> ParamId {
        self.layer_params[l].weight
    }

    pub fn has_readout(&self) -> bool {
        self.readout.is_some()
    }

    /// Per-layer aggregation weights for a sampled mask, with degree
    /// renormalization folded in. `None` aggregates with unit weights.
    pub fn edge_weights(&self, prop: &Propagation, spec: &NoiseSpec, mask: Option<&MaskSample>) -> Vec<EdgeWeights> {
        let Some(mask) = mask else {
            return vec![EdgeWeights::Ones; self.depth()];
        };
        self.specs
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let w = mask.layer(l);
                if spec.normalize_degree {
                    let p = &prop.pattern;
                    let coef = prop.coef(s.kind);
                    EdgeWeights::Fixed(Arc::new(renormalize_rows(p, coef, w)))
                } else {
                    EdgeWeights::Fixed(Arc::clone(w))
                }
            })
            .collect()
    }

    fn layer_forward(
        &self,
        tape: &mut Tape,
        prop: &Propagation,
        l: usize,
        h: Var,
        vars: &[Var],
        weights: &EdgeWeights,
    ) -> Result<Var> {
        let spec = &self.specs[l];
        let p = &self.layer_params[l];
        let (n, c) = tape.shape(h);
        if c != spec.in_dim || n != prop.n_nodes() {
            return Err(Error::Shape {
                op: "layer input",
                lhs: (n, c),
                rhs: (prop.n_nodes(), spec.in_dim),
            });
        }
        let coef = prop.coef(spec.kind);
        let agg = tape.edge_aggregate(&prop.pattern, Some(coef), weights.clone(), h)?;
        let pre = match spec.kind {
            LayerKind::Gcn => tape.matmul(agg, vars[p.weight.index()])?,
            LayerKind::SageMean => {
                let cat = tape.concat_cols(&[h, agg])?;
                tape.matmul(cat, vars[p.weight.index()])?
            }
            LayerKind::Gin => {
                let z = tape.add(h, agg)?;
                let lin = tape.matmul(z, vars[p.weight.index()])?;
                let b = p.bias.expect("gin layers carry a bias");
                tape.add_row(lin, vars[b.index()])?
            }
        };
        Ok(spec.activation.apply(tape, pre))
    }

    /// Node representations after the last layer.
    ///
    /// `vars` are indexed by `ParamId::index` of this model's store, so any
    /// substitute weights (e.g. sampled ones) in the same layout work.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        prop: &Propagation,
        x: Var,
        vars: &[Var],
        weights: &[EdgeWeights],
    ) -> Result<Var> {
        if weights.len() != self.depth() {
            return Err(Error::InvalidArgument(format!(
                "{} edge-weight sets for a {}-layer model",
                weights.len(),
                self.depth()
            )));
        }
        let mut h = x;
        for (l, w) in weights.iter().enumerate() {
            h = self.layer_forward(tape, prop, l, h, vars, w)?;
        }
        Ok(h)
    }

    /// Sum-pool over nodes followed by the readout MLP.
    pub fn readout_with(&self, tape: &mut Tape, h: Var, vars: &[Var]) -> Result<Var> {
        let mlp = self
            .readout
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no readout head".into()))?;
        let pooled = tape.col_sum(h);
        mlp.forward_with(tape, pooled, vars)
    }

    /// Inference pass with a given mask (or none).
    pub fn forward(
        &self,
        g: &Graph,
        prop: &Propagation,
        spec: &NoiseSpec,
        mask: Option<&MaskSample>,
    ) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = bind_frozen(&mut tape, &self.params);
        let x = tape.constant(g.features().clone());
        let weights = self.edge_weights(prop, spec, mask);
        let mut out = self.forward_with(&mut tape, prop, x, &vars, &weights)?;
        if self.readout.is_some() {
            out = self.readout_with(&mut tape, out, &vars)?;
        }
        Ok(tape.value(out).clone())
    }

    /// Draws a mask (unless the noise is `Delta`) for this model's widths.
    pub fn sample_mask<R: Rng + ?Sized>(&self, g: &Graph, spec: &NoiseSpec, rng: &mut R) -> Result<Option<MaskSample>> {
        if spec.is_delta() {
            spec.validate()?;
            return Ok(None);
        }
        sample_mask(spec, g, &self.mask_widths(), rng).map(Some)
    }

    /// [`Model::sample_mask`] reusing the buffers of a previous draw.
    pub fn resample_mask<R: Rng + ?Sized>(
        &self,
        g: &Graph,
        spec: &NoiseSpec,
        rng: &mut R,
        buf: &mut Option<MaskSample>,
    ) -> Result<()> {
        if spec.is_delta() {
            spec.validate()?;
            *buf = None;
            return Ok(());
        }
        resample_mask(spec, g, &self.mask_widths(), rng, buf)
    }

    /// One joint draw of the mask followed by a full forward pass.
    pub fn forward_stochastic<R: Rng + ?Sized>(
        &self,
        g: &Graph,
        prop: &Propagation,
        spec: &NoiseSpec,
        rng: &mut R,
    ) -> Result<Matrix> {
        let mask = self.sample_mask(g, spec, rng)?;
        self.forward(g, prop, spec, mask.as_ref())
    }

    /// Monte-Carlo marginal prediction over `samples` masks. Sample `i` uses
    /// [`sample_stream`]`(seed, i)`.
    pub fn predict_marginal(
        &self,
        g: &Graph,
        prop: &Propagation,
        spec: &NoiseSpec,
        samples: usize,
        seed: u64,
        kind: OutputKind,
    ) -> Result<Matrix> {
        if samples == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let mut acc: Option<Matrix> = None;
        for i in 0..samples {
            let mut rng = sample_stream(seed, i as u64);
            let out = self.forward_stochastic(g, prop, spec, &mut rng)?;
            let out = match kind {
                OutputKind::Classification => softmax_rows(&out),
                OutputKind::Regression => out,
            };
            match &mut acc {
                Some(a) => *a += &out,
                None => acc = Some(out),
            }
        }
        let mut mean = acc.expect("samples >= 1");
        if samples > 1 {
            mean /= samples as f64;
        }
        Ok(mean)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| softmax_exp(x - max));
        let z = row.sum();
        row /= z;
    }
    out
}

/// Index of the largest entry in every row.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect()
}
