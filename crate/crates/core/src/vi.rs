//! Variational posteriors over edge-weight noise and a weight-space
//! Bayes-by-backprop baseline.
//!
//! Posteriors are factorized Normals `z = μ + exp(logσ)·ε` against the
//! prior `N(1, σ_prior)`. Only `μ` and `logσ` live at the chosen
//! granularity; by default `ε` is drawn independently for every
//! `(layer, channel, edge)` coordinate of the mask.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::{EdgeWeights, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{bind, bind_frozen, softmax_rows, Model, OutputKind, Propagation};
use crate::loss::{log_likelihood, LossKind, Targets};
use crate::noise::MaskSample;

/// Mean of the edge-weight prior.
pub const PRIOR_MEAN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    /// One global `(μ, logσ)`.
    Scalar,
    /// One pair per input channel of every layer.
    PerChannel,
    /// One pair per edge, predicted by the amortizer.
    PerEdge,
    /// One pair per edge and channel, predicted by the amortizer.
    PerEdgePerChannel,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Scalar,
        Granularity::PerChannel,
        Granularity::PerEdge,
        Granularity::PerEdgePerChannel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Scalar => "scalar",
            Granularity::PerChannel => "per_channel",
            Granularity::PerEdge => "per_edge",
            Granularity::PerEdgePerChannel => "per_edge_per_channel",
        }
    }

    pub fn is_amortized(self) -> bool {
        matches!(self, Granularity::PerEdge | Granularity::PerEdgePerChannel)
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Granularity::ALL.into_iter().find(|g| g.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown granularity '{s}' (scalar, per_channel, per_edge, per_edge_per_channel)"
            ))
        })
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How standard-normal draws map onto the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonMode {
    /// Fresh `ε` for every `(layer, channel, edge)` coordinate.
    PerCoordinate,
    /// One `ε` per variational coordinate, broadcast like `μ`.
    PerParameter,
}

/// Tuned `(μ₀, logσ₀, σ_prior)` for the citation benchmarks. Unknown
/// datasets fall back to the Cora column.
pub fn tuned_defaults(dataset: &str, granularity: Granularity) -> (f64, f64, f64) {
    let citeseer = dataset.eq_ignore_ascii_case("citeseer");
    match (granularity, citeseer) {
        (Granularity::Scalar, false) => (0.5, 1.0, 0.2),
        (Granularity::Scalar, true) => (0.5, 0.0, 0.5),
        (Granularity::PerChannel, false) => (0.25, 2.0, 1.0),
        (Granularity::PerChannel, true) => (0.25, 2.0, 0.5),
        (Granularity::PerEdge, _) => (0.5, 1.5, 0.5),
        (Granularity::PerEdgePerChannel, false) => (0.5, 1.0, 0.5),
        (Granularity::PerEdgePerChannel, true) => (0.5, 1.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViConfig {
    pub granularity: Granularity,
    pub mu0: f64,
    pub log_sigma0: f64,
    pub sigma_prior: f64,
    pub epsilon: EpsilonMode,
    pub resample_per_layer: bool,
    pub mask_self_loops: bool,
    /// Width of the amortizer's encoder and head.
    pub encoder_hidden: usize,
    /// Multiplier on the KL term of the objective.
    pub kl_weight: f64,
}

impl ViConfig {
    pub fn new(granularity: Granularity) -> Self {
        let (mu0, log_sigma0, sigma_prior) = tuned_defaults("cora", granularity);
        Self {
            granularity,
            mu0,
            log_sigma0,
            sigma_prior,
            epsilon: EpsilonMode::PerCoordinate,
            resample_per_layer: true,
            mask_self_loops: true,
            encoder_hidden: 64,
            kl_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_prior > 0.0 && self.sigma_prior.is_finite()) {
            return Err(Error::Posterior(format!(
                "prior σ must be positive, got {}",
                self.sigma_prior
            )));
        }
        if !self.mu0.is_finite() || !self.log_sigma0.is_finite() {
            return Err(Error::Posterior("initial μ and logσ must be finite".into()));
        }
        if self.encoder_hidden == 0 {
            return Err(Error::Posterior("encoder width must be positive".into()));
        }
        Ok(())
    }
}

/// `KL(N(μ, e^{logσ}) ‖ N(μ_p, σ_p))` summed over coordinates.
pub fn kl_normal(mu: &Matrix, log_sigma: &Matrix, prior_mu: f64, prior_sigma: f64) -> Result<f64> {
    if !(prior_sigma.is_finite() && prior_sigma > 0.0) {
        return Err(Error::Posterior(format!("prior σ must be positive, got {prior_sigma}")));
    }
    if mu.dim() != log_sigma.dim() {
        return Err(Error::Shape {
            op: "kl_normal",
            lhs: mu.dim(),
            rhs: log_sigma.dim(),
        });
    }
    let ln_p = prior_sigma.ln();
    Ok(mu
        .iter()
        .zip(log_sigma)
        .map(|(&m, &ls)| {
            let d = ls - ln_p;
            let z = (m - prior_mu) / prior_sigma;
            -d + 0.5 * ((2.0 * d).exp() + z * z) - 0.5
        })
        .sum())
}

/// Tape form of [`kl_normal`].
pub fn kl_normal_on_tape(tape: &mut Tape, mu: Var, log_sigma: Var, prior_mu: f64, prior_sigma: f64) -> Result<Var> {
    if !(prior_sigma.is_finite() && prior_sigma > 0.0) {
        return Err(Error::Posterior(format!("prior σ must be positive, got {prior_sigma}")));
    }
    let d = tape.add_scalar(log_sigma, -prior_sigma.ln());
    let d2 = tape.scale(d, 2.0);
    let var_ratio = tape.exp(d2);
    let shifted = tape.add_scalar(mu, -prior_mu);
    let z = tape.scale(shifted, 1.0 / prior_sigma);
    let z2 = tape.mul(z, z)?;
    let quad = tape.add(var_ratio, z2)?;
    let half = tape.scale(quad, 0.5);
    let per = tape.sub(half, d)?;
    let total = tape.sum(per);
    let n = tape.value(mu).len() as f64;
    Ok(tape.add_scalar(total, -0.5 * n))
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    let d = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| d.sample(rng))
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn kaiming_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (1.0 / rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..=limit))
}

/// GCN encoder plus an edge head mapping `concat(F_row, F_col)` to `(μ, logσ)`.
#[derive(Debug, Clone)]
struct Amortizer {
    enc1: ParamId,
    enc2: ParamId,
    head_w: ParamId,
    head_b: ParamId,
    mu_w: ParamId,
    mu_b: ParamId,
    ls_w: ParamId,
    ls_b: ParamId,
}

#[derive(Debug, Clone)]
enum Layout {
    Free { mu: Vec<ParamId>, log_sigma: Vec<ParamId> },
    Amortized(Amortizer),
}

/// Variational parameters sampled onto a tape.
#[derive(Debug)]
pub struct PosteriorDraw {
    /// Per-layer aggregation weights for [`Model::forward_with`].
    pub weights: Vec<EdgeWeights>,
    /// Closed-form KL to the prior over the variational coordinates.
    pub kl: Var,
}

#[derive(Debug, Clone)]
pub struct VariationalPosterior {
    cfg: ViConfig,
    widths: Vec<usize>,
    nnz: usize,
    /// Pattern entries whose weight is random.
    masked: Arc<[usize]>,
    rows: Arc<[usize]>,
    cols: Arc<[usize]>,
    layout: Layout,
    params: ParamStore,
}

impl VariationalPosterior {
    /// Posterior for a model whose layer `l` consumes `widths[l]` channels on `g`.
    pub fn new<R: Rng + ?Sized>(cfg: &ViConfig, g: &Graph, widths: &[usize], rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Posterior(format!(
                "layer widths must be positive, got {widths:?}"
            )));
        }
        let pattern = g.augmented();
        let masked: Arc<[usize]> = (0..pattern.nnz())
            .filter(|&e| cfg.mask_self_loops || pattern.entry_rows()[e] != pattern.indices()[e])
            .collect();
        let rows: Arc<[usize]> = masked.iter().map(|&e| pattern.entry_rows()[e]).collect();
        let cols: Arc<[usize]> = masked.iter().map(|&e| pattern.indices()[e]).collect();

        let mut params = ParamStore::new();
        let layout = match cfg.granularity {
            Granularity::Scalar => Layout::Free {
                mu: vec![params.add("q.mu", Array2::from_elem((1, 1), cfg.mu0))],
                log_sigma: vec![params.add("q.log_sigma", Array2::from_elem((1, 1), cfg.log_sigma0))],
            },
            Granularity::PerChannel => {
                let mut mu = Vec::new();
                let mut log_sigma = Vec::new();
                for (l, &w) in widths.iter().enumerate() {
                    mu.push(params.add(format!("q.mu.{l}"), Array2::from_elem((1, w), cfg.mu0)));
                    log_sigma.push(params.add(format!("q.log_sigma.{l}"), Array2::from_elem((1, w), cfg.log_sigma0)));
                }
                Layout::Free { mu, log_sigma }
            }
            Granularity::PerEdge | Granularity::PerEdgePerChannel => {
                let h = cfg.encoder_hidden;
                let k = match cfg.granularity {
                    Granularity::PerEdge => 1,
                    _ => widths.iter().sum(),
                };
                let f = g.n_features();
                Layout::Amortized(Amortizer {
                    enc1: params.add("enc.0.weight", kaiming_uniform(f, h, rng)),
                    enc2: params.add("enc.1.weight", kaiming_uniform(h, h, rng)),
                    head_w: params.add("head.0.weight", kaiming_uniform(2 * h, h, rng)),
                    head_b: params.add("head.0.bias", Array2::zeros((1, h))),
                    mu_w: params.add("head.mu.weight", normal_matrix(h, k, 0.01, rng)),
                    mu_b: params.add("head.mu.bias", Array2::from_elem((1, k), cfg.mu0)),
                    ls_w: params.add("head.log_sigma.weight", normal_matrix(h, k, 0.001, rng)),
                    ls_b: params.add("head.log_sigma.bias", Array2::from_elem((1, k), cfg.log_sigma0)),
                })
            }
        };
        Ok(Self {
            cfg: *cfg,
            widths: widths.to_vec(),
            nnz: pattern.nnz(),
            masked,
            rows,
            cols,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ViConfig {
        &self.cfg
    }

    pub fn granularity(&self) -> Granularity {
        self.cfg.granularity
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Number of pattern entries carrying a random weight.
    pub fn masked_entries(&self) -> usize {
        self.masked.len()
    }

    /// Ids of the free `(μ, logσ)` parameters, one pair per layer for
    /// per-channel posteriors. Empty for amortized posteriors.
    pub fn free_params(&self) -> Vec<(ParamId, ParamId)> {
        match &self.layout {
            Layout::Free { mu, log_sigma } => mu.iter().copied().zip(log_sigma.iter().copied()).collect(),
            Layout::Amortized(_) => Vec::new(),
        }
    }

    /// Ids of the amortizer's final `(μ weight, μ bias, logσ weight, logσ bias)`.
    pub fn head_params(&self) -> Option<[ParamId; 4]> {
        match &self.layout {
            Layout::Amortized(a) => Some([a.mu_w, a.mu_b, a.ls_w, a.ls_b]),
            Layout::Free { .. } => None,
        }
    }

    fn amortize_vars(&self, tape: &mut Tape, vars: &[Var], g: &Graph) -> Result<(Var, Var)> {
        let Layout::Amortized(a) = &self.layout else {
            return Err(Error::Posterior(format!(
                "granularity {} has no amortizer",
                self.cfg.granularity
            )));
        };
        let prop = g.sym_normalized_adjacency();
        let x = tape.constant(g.features().clone());
        let h = tape.spmm(&prop, x)?;
        let h = tape.matmul(h, vars[a.enc1.index()])?;
        let h = tape.relu(h);
        let h = tape.spmm(&prop, h)?;
        let f = tape.matmul(h, vars[a.enc2.index()])?;
        let fr = tape.gather_rows(f, &self.rows)?;
        let fc = tape.gather_rows(f, &self.cols)?;
        let cat = tape.concat_cols(&[fr, fc])?;
        let z = tape.matmul(cat, vars[a.head_w.index()])?;
        let z = tape.add_row(z, vars[a.head_b.index()])?;
        let z = tape.relu(z);
        let mu = tape.matmul(z, vars[a.mu_w.index()])?;
        let mu = tape.add_row(mu, vars[a.mu_b.index()])?;
        let ls = tape.matmul(z, vars[a.ls_w.index()])?;
        let ls = tape.add_row(ls, vars[a.ls_b.index()])?;
        Ok((mu, ls))
    }

    /// Per-edge `(μ, logσ)` from the amortizer, one row per masked pattern
    /// entry in pattern order.
    pub fn amortize(&self, g: &Graph) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let vars = bind_frozen(&mut tape, &self.params);
        let (mu, ls) = self.amortize_vars(&mut tape, &vars, g)?;
        Ok((tape.value(mu).clone(), tape.value(ls).clone()))
    }

    /// Per-layer `(μ, logσ)` nodes at their own granularity and the KL over them.
    fn layer_stats(&self, tape: &mut Tape, vars: &[Var], g: &Graph) -> Result<(Vec<(Var, Var)>, Var)> {
        let sp = self.cfg.sigma_prior;
        match &self.layout {
            Layout::Free { mu, log_sigma } => {
                let mut stats = Vec::with_capacity(self.widths.len());
                let mut kl_terms = Vec::new();
                for (&m, &ls) in mu.iter().zip(log_sigma) {
                    let (mv, lv) = (vars[m.index()], vars[ls.index()]);
                    kl_terms.push(kl_normal_on_tape(tape, mv, lv, PRIOR_MEAN, sp)?);
                }
                for l in 0..self.widths.len() {
                    let i = if mu.len() == 1 { 0 } else { l };
                    stats.push((vars[mu[i].index()], vars[log_sigma[i].index()]));
                }
                let kl = sum_vars(tape, &kl_terms)?;
                Ok((stats, kl))
            }
            Layout::Amortized(_) => {
                let (mu, ls) = self.amortize_vars(tape, vars, g)?;
                let kl = kl_normal_on_tape(tape, mu, ls, PRIOR_MEAN, sp)?;
                let stats = if self.cfg.granularity == Granularity::PerEdge {
                    vec![(mu, ls); self.widths.len()]
                } else {
                    let mut start = 0;
                    let mut out = Vec::new();
                    for &w in &self.widths {
                        let m = tape.slice_cols(mu, start, start + w)?;
                        let s = tape.slice_cols(ls, start, start + w)?;
                        out.push((m, s));
                        start += w;
                    }
                    out
                };
                Ok((stats, kl))
            }
        }
    }

    fn draw_eps<R: Rng + ?Sized>(&self, stat_shapes: &[(usize, usize)], rng: &mut R) -> Vec<Matrix> {
        let r = self.masked.len();
        let shape_of = |l: usize| match self.cfg.epsilon {
            EpsilonMode::PerCoordinate => (r, self.widths[l]),
            EpsilonMode::PerParameter => stat_shapes[l],
        };
        if self.cfg.resample_per_layer {
            return (0..self.widths.len())
                .map(|l| {
                    let (a, b) = shape_of(l);
                    standard_normal(a, b, rng)
                })
                .collect();
        }
        let widest = (0..self.widths.len())
            .max_by_key(|&l| shape_of(l).1)
            .expect("non-empty");
        let (a, b) = shape_of(widest);
        let shared = standard_normal(a, b, rng);
        (0..self.widths.len())
            .map(|l| {
                let (ra, rb) = shape_of(l);
                shared.slice(s![..ra, ..rb]).to_owned()
            })
            .collect()
    }

    /// Reparameterized mask draw recorded on `tape`. `vars` binds this
    /// posterior's parameters.
    pub fn sample_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        g: &Graph,
        rng: &mut R,
    ) -> Result<PosteriorDraw> {
        let (stats, kl) = self.layer_stats(tape, vars, g)?;
        let shapes: Vec<_> = stats.iter().map(|&(m, _)| tape.shape(m)).collect();
        let eps = self.draw_eps(&shapes, rng);
        let r = self.masked.len();
        let full = r == self.nnz;
        let mut weights = Vec::with_capacity(stats.len());
        for ((&(mu, ls), e), &w) in stats.iter().zip(eps).zip(&self.widths) {
            let (er, ec) = e.dim();
            let sigma = tape.exp(ls);
            let (mu_b, sigma_b) = if tape.shape(mu) == (er, ec) {
                (mu, sigma)
            } else {
                (tape.broadcast(mu, er, ec)?, tape.broadcast(sigma, er, ec)?)
            };
            let eps = tape.constant(e);
            let noise = tape.mul(sigma_b, eps)?;
            let mut z = tape.add(mu_b, noise)?;
            if tape.shape(z).0 != r {
                z = tape.broadcast(z, r, tape.shape(z).1)?;
            }
            if !full {
                let k = tape.shape(z).1;
                z = tape.scatter_add_rows(z, &self.masked, self.nnz)?;
                let mut ones = Array2::from_elem((self.nnz, k), 1.0);
                for &e in self.masked.iter() {
                    ones.row_mut(e).fill(0.0);
                }
                let ones = tape.constant(ones);
                z = tape.add(z, ones)?;
            }
            debug_assert!(tape.shape(z).1 == 1 || tape.shape(z).1 == w);
            weights.push(EdgeWeights::Var(z));
        }
        Ok(PosteriorDraw { weights, kl })
    }

    /// Non-differentiable mask draw.
    pub fn sample_mask<R: Rng + ?Sized>(&self, g: &Graph, rng: &mut R) -> Result<MaskSample> {
        let mut tape = Tape::new();
        let vars = bind_frozen(&mut tape, &self.params);
        let draw = self.sample_on_tape(&mut tape, &vars, g, rng)?;
        let layers = draw
            .weights
            .iter()
            .map(|w| match w {
                EdgeWeights::Var(v) => tape.value(*v).clone(),
                _ => unreachable!("posterior draws are tape nodes"),
            })
            .collect();
        MaskSample::from_layers(layers, self.widths.clone())
    }

    /// KL to the prior, counting each variational coordinate once.
    pub fn kl(&self, g: &Graph) -> Result<f64> {
        let sp = self.cfg.sigma_prior;
        match &self.layout {
            Layout::Free { mu, log_sigma } => mu.iter().zip(log_sigma).try_fold(0.0, |acc, (&m, &ls)| {
                Ok(acc + kl_normal(self.params.value(m), self.params.value(ls), PRIOR_MEAN, sp)?)
            }),
            Layout::Amortized(_) => {
                let (mu, ls) = self.amortize(g)?;
                kl_normal(&mu, &ls, PRIOR_MEAN, sp)
            }
        }
    }
}

fn sum_vars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = *terms
        .first()
        .ok_or_else(|| Error::Posterior("no variational parameters".into()))?;
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// A task model trained jointly with a posterior over its aggregation noise.
#[derive(Debug, Clone)]
pub struct ViModel {
    pub model: Model,
    pub posterior: VariationalPosterior,
}

/// Terms of one ELBO evaluation recorded on a tape.
#[derive(Debug)]
pub struct ElboTerms {
    pub elbo: Var,
    pub log_likelihood: Var,
    pub kl: Var,
    pub output: Var,
}

impl ViModel {
    pub fn new<R: Rng + ?Sized>(model: Model, cfg: &ViConfig, g: &Graph, rng: &mut R) -> Result<Self> {
        let posterior = VariationalPosterior::new(cfg, g, &model.mask_widths(), rng)?;
        Ok(Self { model, posterior })
    }

    /// Monte-Carlo ELBO `E_q[log p(y | H)] − w·KL(q ‖ p)` with `mc_samples` draws.
    #[allow(clippy::too_many_arguments)]
    pub fn elbo_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        model_vars: &[Var],
        q_vars: &[Var],
        g: &Graph,
        prop: &Propagation,
        loss: LossKind,
        targets: &Targets,
        rows: &[usize],
        mc_samples: usize,
        rng: &mut R,
    ) -> Result<ElboTerms> {
        if mc_samples == 0 {
            return Err(Error::InvalidArgument("need at least one ELBO sample".into()));
        }
        let x = tape.constant(g.features().clone());
        let mut ll_terms = Vec::with_capacity(mc_samples);
        let mut kl = None;
        let mut output = None;
        for _ in 0..mc_samples {
            let draw = self.posterior.sample_on_tape(tape, q_vars, g, rng)?;
            let out = self.model.forward_with(tape, prop, x, model_vars, &draw.weights)?;
            ll_terms.push(log_likelihood(tape, loss, out, targets, rows)?);
            kl.get_or_insert(draw.kl);
            output.get_or_insert(out);
        }
        let ll = sum_vars(tape, &ll_terms)?;
        let ll = tape.scale(ll, 1.0 / mc_samples as f64);
        let kl = kl.expect("mc_samples >= 1");
        let wkl = tape.scale(kl, self.posterior.config().kl_weight);
        let elbo = tape.sub(ll, wkl)?;
        Ok(ElboTerms {
            elbo,
            log_likelihood: ll,
            kl,
            output: output.expect("mc_samples >= 1"),
        })
    }

    /// ELBO value for fixed randomness.
    #[allow(clippy::too_many_arguments)]
    pub fn elbo<R: Rng + ?Sized>(
        &self,
        g: &Graph,
        prop: &Propagation,
        loss: LossKind,
        targets: &Targets,
        rows: &[usize],
        mc_samples: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let mv = bind_frozen(&mut tape, self.model.params());
        let qv = bind_frozen(&mut tape, self.posterior.params());
        let t = self.elbo_on_tape(&mut tape, &mv, &qv, g, prop, loss, targets, rows, mc_samples, rng)?;
        Ok(tape.scalar(t.elbo))
    }

    /// Averages predictions over `samples` posterior draws.
    pub fn predict_marginal(
        &self,
        g: &Graph,
        prop: &Propagation,
        samples: usize,
        seed: u64,
        kind: OutputKind,
    ) -> Result<Matrix> {
        if samples == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let mut acc: Option<Matrix> = None;
        for i in 0..samples {
            let mut rng = crate::layers::sample_stream(seed, i as u64);
            let mut tape = Tape::new();
            let mv = bind_frozen(&mut tape, self.model.params());
            let qv = bind_frozen(&mut tape, self.posterior.params());
            let draw = self.posterior.sample_on_tape(&mut tape, &qv, g, &mut rng)?;
            let x = tape.constant(g.features().clone());
            let out = self.model.forward_with(&mut tape, prop, x, &mv, &draw.weights)?;
            let out = match kind {
                OutputKind::Classification => softmax_rows(tape.value(out)),
                OutputKind::Regression => tape.value(out).clone(),
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

/// Mean-field Normal posterior over every weight of a deterministic model.
#[derive(Debug, Clone)]
pub struct BbbModel {
    template: Model,
    /// `(μ, logσ)` ids aligned with the template's parameter order.
    pairs: Vec<(ParamId, ParamId)>,
    params: ParamStore,
    prior_sigma: f64,
}

impl BbbModel {
    /// Means start at the template's weights and every `logσ` at `log_sigma0`.
    /// The prior is `N(0, prior_sigma)` on every weight.
    pub fn new(template: Model, log_sigma0: f64, prior_sigma: f64) -> Result<Self> {
        if !(prior_sigma.is_finite() && prior_sigma > 0.0) {
            return Err(Error::Posterior(format!("prior σ must be positive, got {prior_sigma}")));
        }
        let mut params = ParamStore::new();
        let pairs = template
            .params()
            .iter()
            .map(|(_, p)| {
                let mu = params.add(format!("{}.mu", p.name), p.value.clone());
                let ls = params.add(
                    format!("{}.log_sigma", p.name),
                    Array2::from_elem(p.value.raw_dim(), log_sigma0),
                );
                (mu, ls)
            })
            .collect();
        Ok(Self {
            template,
            pairs,
            params,
            prior_sigma,
        })
    }

    pub fn template(&self) -> &Model {
        &self.template
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn pairs(&self) -> &[(ParamId, ParamId)] {
        &self.pairs
    }

    /// Reparameterized weights in the template's layout, plus the weight KL.
    pub fn sample_weights<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        rng: &mut R,
    ) -> Result<(Vec<Var>, Var)> {
        let mut weights = Vec::with_capacity(self.pairs.len());
        let mut kl_terms = Vec::with_capacity(self.pairs.len());
        for &(mu, ls) in &self.pairs {
            let (mv, lv) = (vars[mu.index()], vars[ls.index()]);
            let (r, c) = tape.shape(mv);
            let eps = tape.constant(standard_normal(r, c, rng));
            let sigma = tape.exp(lv);
            let noise = tape.mul(sigma, eps)?;
            weights.push(tape.add(mv, noise)?);
            kl_terms.push(kl_normal_on_tape(tape, mv, lv, 0.0, self.prior_sigma)?);
        }
        let kl = sum_vars(tape, &kl_terms)?;
        Ok((weights, kl))
    }

    /// One forward pass with sampled weights and unit aggregation weights.
    pub fn forward<R: Rng + ?Sized>(&self, g: &Graph, prop: &Propagation, rng: &mut R) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = bind_frozen(&mut tape, &self.params);
        let (w, _) = self.sample_weights(&mut tape, &vars, rng)?;
        let x = tape.constant(g.features().clone());
        let ones = vec![EdgeWeights::Ones; self.template.depth()];
        let out = self.template.forward_with(&mut tape, prop, x, &w, &ones)?;
        Ok(tape.value(out).clone())
    }

    /// `(elbo, kl)` nodes for one weight draw.
    #[allow(clippy::too_many_arguments)]
    pub fn elbo_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        g: &Graph,
        prop: &Propagation,
        loss: LossKind,
        targets: &Targets,
        rows: &[usize],
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let (w, kl) = self.sample_weights(tape, vars, rng)?;
        let x = tape.constant(g.features().clone());
        let ones = vec![EdgeWeights::Ones; self.template.depth()];
        let out = self.template.forward_with(tape, prop, x, &w, &ones)?;
        let ll = log_likelihood(tape, loss, out, targets, rows)?;
        let elbo = tape.sub(ll, kl)?;
        Ok((elbo, kl))
    }

    pub fn kl(&self) -> Result<f64> {
        self.pairs.iter().try_fold(0.0, |acc, &(mu, ls)| {
            Ok(acc + kl_normal(self.params.value(mu), self.params.value(ls), 0.0, self.prior_sigma)?)
        })
    }
}

/// Binds a model and posterior for one training step.
pub fn bind_vi(tape: &mut Tape, m: &ViModel) -> (Vec<Var>, Vec<Var>) {
    (bind(tape, m.model.params()), bind(tape, m.posterior.params()))
}
