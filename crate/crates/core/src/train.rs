//! Optimizer and node-classification training loops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, ParamId, ParamStore, Tape};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{argmax_rows, bind, softmax_rows, Model, ModelConfig, OutputKind, Propagation};
use crate::loss::{loss, LossKind, Targets};
use crate::noise::NoiseSpec;
use crate::vi::{bind_vi, BbbModel, ViConfig, ViModel};

/// Adam with optional L2 penalties on chosen parameters.
///
/// The penalty `λ·w` is added to the gradient of each listed parameter
/// before the moment update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    decay: Vec<(ParamId, f64)>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Matrix> = store.iter().map(|(_, p)| Matrix::zeros(p.value.raw_dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
            decay: Vec::new(),
        }
    }

    pub fn with_l2(mut self, id: ParamId, lambda: f64) -> Self {
        if lambda != 0.0 {
            self.decay.push((id, lambda));
        }
        self
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Fails without touching any parameter if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (_, p) in store.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of '{}'", p.name)));
            }
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t);
        let b2t = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let lambda = self.decay.iter().filter(|(d, _)| *d == id).map(|(_, l)| l).sum::<f64>();
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g + lambda * *w;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *w -= self.lr * (*m / b1t) / ((*v / b2t).sqrt() + self.eps);
                });
        }
        store.zero_grad();
        Ok(())
    }
}

/// What regularizes the aggregation during training.
#[derive(Debug, Clone)]
pub enum Method {
    /// Fixed noise distribution (`Delta` for a deterministic model).
    Noise(NoiseSpec),
    /// Learned posterior over the noise.
    Vi(ViConfig),
    /// Mean-field posterior over weights, unit aggregation weights.
    Bbb { log_sigma0: f64, prior_sigma: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    /// L2 coefficient on the first layer's weight.
    pub l2_first_layer: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; `None` runs all epochs.
    pub patience: Option<usize>,
    /// Samples for the final marginal prediction.
    pub mc_samples: usize,
    /// Samples per validation check.
    pub val_samples: usize,
    /// ELBO samples per VI step.
    pub elbo_samples: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            l2_first_layer: 5e-3,
            epochs: 2000,
            patience: Some(100),
            mc_samples: crate::layers::DEFAULT_MC_SAMPLES,
            val_samples: 1,
            elbo_samples: 1,
            loss: LossKind::CrossEntropy,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if self.l2_first_layer < 0.0 {
            return Err(Error::Config("train.l2 must be non-negative".into()));
        }
        if self.epochs == 0 || self.mc_samples == 0 || self.val_samples == 0 || self.elbo_samples == 0 {
            return Err(Error::Config("epochs and sample counts must be positive".into()));
        }
        if let Some(p) = self.patience {
            if p == 0 || p > self.epochs {
                return Err(Error::Config(format!(
                    "train.patience must lie in 1..={}, got {p}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// A trained predictor of any method.
#[derive(Debug, Clone)]
pub enum Trained {
    Noise { model: Model, spec: NoiseSpec },
    Vi(ViModel),
    Bbb(BbbModel),
}

impl Trained {
    /// Marginal class probabilities (or regression means) over `samples` draws.
    pub fn predict(
        &self,
        g: &Graph,
        prop: &Propagation,
        samples: usize,
        seed: u64,
        kind: OutputKind,
    ) -> Result<Matrix> {
        match self {
            Trained::Noise { model, spec } => {
                let s = if spec.is_delta() { 1 } else { samples };
                model.predict_marginal(g, prop, spec, s, seed, kind)
            }
            Trained::Vi(m) => m.predict_marginal(g, prop, samples, seed, kind),
            Trained::Bbb(m) => {
                if samples == 0 {
                    return Err(Error::InvalidArgument("need at least one sample".into()));
                }
                let mut acc = Matrix::zeros((g.n_nodes(), m.template().out_dim()));
                for i in 0..samples {
                    let mut rng = crate::layers::sample_stream(seed, i as u64);
                    let out = m.forward(g, prop, &mut rng)?;
                    acc += &match kind {
                        OutputKind::Classification => softmax_rows(&out),
                        OutputKind::Regression => out,
                    };
                }
                Ok(acc / samples as f64)
            }
        }
    }

    fn stores(&self) -> Vec<&ParamStore> {
        match self {
            Trained::Noise { model, .. } => vec![model.params()],
            Trained::Vi(m) => vec![m.model.params(), m.posterior.params()],
            Trained::Bbb(m) => vec![m.params()],
        }
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        match self {
            Trained::Noise { model, .. } => vec![model.params_mut()],
            Trained::Vi(m) => vec![m.model.params_mut(), m.posterior.params_mut()],
            Trained::Bbb(m) => vec![m.params_mut()],
        }
    }

    fn snapshot(&self) -> Vec<Vec<Matrix>> {
        self.stores().iter().map(|s| s.snapshot()).collect()
    }

    fn restore(&mut self, snap: &[Vec<Matrix>]) {
        for (s, v) in self.stores_mut().into_iter().zip(snap) {
            s.restore(v);
        }
    }

    /// Adam per store; the L2 term targets the first aggregation layer's weight.
    fn optimizers(&self, cfg: &TrainConfig) -> Vec<Adam> {
        match self {
            Trained::Noise { model, .. } => {
                vec![Adam::new(model.params(), cfg.lr).with_l2(model.layer_weight(0), cfg.l2_first_layer)]
            }
            Trained::Vi(m) => vec![
                Adam::new(m.model.params(), cfg.lr).with_l2(m.model.layer_weight(0), cfg.l2_first_layer),
                Adam::new(m.posterior.params(), cfg.lr),
            ],
            Trained::Bbb(m) => vec![Adam::new(m.params(), cfg.lr)],
        }
    }
}

/// Fraction of `rows` whose argmax matches the label.
pub fn accuracy(probs: &Matrix, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let pred = argmax_rows(probs);
    rows.iter().filter(|&&r| pred[r] == labels[r]).count() as f64 / rows.len() as f64
}

/// Root-mean-square error over `rows`.
pub fn rmse(pred: &Matrix, target: &Matrix, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let s: f64 = rows
        .iter()
        .map(|&r| {
            pred.row(r)
                .iter()
                .zip(target.row(r))
                .map(|(p, t)| (p - t).powi(2))
                .sum::<f64>()
        })
        .sum();
    (s / (rows.len() * pred.ncols()) as f64).sqrt()
}

/// Trains a node classifier with the given regularization method.
///
/// Each step draws one mask (or one posterior / weight sample), takes an Adam
/// step on the training loss (negative ELBO per training node for Bayesian
/// methods), and tracks validation accuracy. The parameters with the best
/// validation accuracy are restored and scored with `cfg.mc_samples` draws.
pub fn train_node_classifier(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    g: &Graph,
    split: &Split,
    method: &Method,
) -> Result<(TrainReport, Trained)> {
    cfg.validate()?;
    split.validate(g.n_nodes())?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let labels = g
        .labels()
        .ok_or_else(|| Error::InvalidArgument("node classification needs labels".into()))?
        .to_vec();
    let targets = Targets::classes(&labels, model_cfg.out_dim);
    let prop = Propagation::new(g);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(model_cfg, &mut init_rng)?;
    let mut trained = match method {
        Method::Noise(spec) => {
            spec.validate()?;
            Trained::Noise { model, spec: *spec }
        }
        Method::Vi(vc) => Trained::Vi(ViModel::new(model, vc, g, &mut init_rng)?),
        Method::Bbb {
            log_sigma0,
            prior_sigma,
        } => Trained::Bbb(BbbModel::new(model, *log_sigma0, *prior_sigma)?),
    };
    let mut opts = trained.optimizers(cfg);
    let mut rng = crate::layers::sample_stream(cfg.seed, u64::MAX);
    let n_train = split.train.len() as f64;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, trained.snapshot());
    let mut stopped_early = false;
    let mut mask_buf = None;
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let (train_loss, grads) = match &trained {
            Trained::Noise { model, spec } => {
                let vars = bind(&mut tape, model.params());
                let x = tape.constant(g.features().clone());
                model.resample_mask(g, spec, &mut rng, &mut mask_buf)?;
                let w = model.edge_weights(&prop, spec, mask_buf.as_ref());
                let out = model.forward_with(&mut tape, &prop, x, &vars, &w)?;
                let l = loss(&mut tape, cfg.loss, out, &targets, &split.train)?;
                (tape.scalar(l), tape.backward(l)?)
            }
            Trained::Vi(m) => {
                let (mv, qv) = bind_vi(&mut tape, m);
                let t = m.elbo_on_tape(
                    &mut tape,
                    &mv,
                    &qv,
                    g,
                    &prop,
                    cfg.loss,
                    &targets,
                    &split.train,
                    cfg.elbo_samples,
                    &mut rng,
                )?;
                let l = tape.scale(t.elbo, -1.0 / n_train);
                (tape.scalar(l), tape.backward(l)?)
            }
            Trained::Bbb(m) => {
                let vars = bind(&mut tape, m.params());
                let (elbo, _) =
                    m.elbo_on_tape(&mut tape, &vars, g, &prop, cfg.loss, &targets, &split.train, &mut rng)?;
                let l = tape.scale(elbo, -1.0 / n_train);
                (tape.scalar(l), tape.backward(l)?)
            }
        };
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        for (opt, store) in opts.iter_mut().zip(trained.stores_mut()) {
            grads.accumulate_into(store);
            opt.step(store).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}")),
                e => e,
            })?;
        }

        let val_accuracy = if split.val.is_empty() {
            0.0
        } else {
            let probs = trained.predict(
                g,
                &prop,
                cfg.val_samples,
                cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9),
                OutputKind::Classification,
            )?;
            accuracy(&probs, &labels, &split.val)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
        });
        if val_accuracy > best.0 {
            best = (val_accuracy, epoch, trained.snapshot());
        } else if let Some(p) = cfg.patience {
            if epoch - best.1 >= p {
                stopped_early = true;
                break;
            }
        }
    }
    if cfg.patience.is_some() {
        trained.restore(&best.2);
    }

    let probs = trained.predict(g, &prop, cfg.mc_samples, cfg.seed, OutputKind::Classification)?;
    let report = TrainReport {
        history,
        best_epoch: best.1,
        best_val_accuracy: best.0,
        stopped_early,
        train_accuracy: accuracy(&probs, &labels, &split.train),
        val_accuracy: accuracy(&probs, &labels, &split.val),
        test_accuracy: accuracy(&probs, &labels, &split.test),
    };
    log::info!(
        "best epoch {} (val {:.4}), test accuracy {:.4}",
        report.best_epoch,
        report.best_val_accuracy,
        report.test_accuracy
    );
    Ok((report, trained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let mut s = ParamStore::new();
        let id = s.add("w", array![[1.0, -2.0, 0.5]]);
        s.get_mut(id).grad = array![[3.0, -0.1, 0.0]];
        let mut opt = Adam::new(&s, 0.01);
        opt.step(&mut s).unwrap();
        let w = s.value(id);
        assert!((w[[0, 0]] - 0.99).abs() < 1e-9);
        assert!((w[[0, 1]] + 1.99).abs() < 1e-9);
        assert_eq!(w[[0, 2]], 0.5);
        assert!(s.grad(id).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn l2_only_touches_listed_params() {
        let mut s = ParamStore::new();
        let a = s.add("a", array![[2.0]]);
        let b = s.add("b", array![[2.0]]);
        let mut opt = Adam::new(&s, 0.1).with_l2(a, 1.0);
        opt.step(&mut s).unwrap();
        assert!(s.value(a)[[0, 0]] < 2.0);
        assert_eq!(s.value(b)[[0, 0]], 2.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = ParamStore::new();
        let a = s.add("a", array![[2.0]]);
        s.get_mut(a).grad = array![[f64::NAN]];
        let mut opt = Adam::new(&s, 0.1);
        assert!(matches!(opt.step(&mut s), Err(Error::NonFinite(_))));
        assert_eq!(s.value(a)[[0, 0]], 2.0);
    }
}
