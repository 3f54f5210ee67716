//! `key = value` run configuration.
//!
//! Keys are grouped under `model.`, `noise.`, `vi.`, `train.` and `data.`.
//! Lines starting with `#` are comments. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SplitPolicy;
use crate::error::{Error, Result};
use crate::layers::LayerKind;
use crate::loss::LossKind;
use crate::noise::{preset_spec, EdgeSharing, NoiseFamily, NoiseSpec, Preset};
use crate::train::{Method, TrainConfig};
use crate::vi::{tuned_defaults, EpsilonMode, Granularity, ViConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub kind: LayerKind,
    pub hidden: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub dataset: String,
    /// Overrides the `STAG_DATA_DIR` lookup.
    pub dir: Option<PathBuf>,
    pub split: SplitPolicy,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub row_normalize: bool,
    /// Use the generated Cora-sized graph instead of files on disk.
    pub synthetic: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelSection,
    pub method: Method,
    pub train: TrainConfig,
    pub data: DataSection,
    pub runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::parse("").expect("empty configuration is valid")
    }
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn take_raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("line {line}: bad value '{v}' for {key}: {e}"))),
        }
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str, why: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?
            .ok_or_else(|| Error::Config(format!("missing key {key} ({why})")))
    }
}

fn parse_edges(s: &str) -> Result<EdgeSharing> {
    match s {
        "per_edge" => Ok(EdgeSharing::PerEdge),
        "per_destination" => Ok(EdgeSharing::PerDestination),
        "per_source" => Ok(EdgeSharing::PerSource),
        _ => Err(Error::Config(format!(
            "unknown edge sharing '{s}' (per_edge, per_destination, per_source)"
        ))),
    }
}

fn edges_name(e: EdgeSharing) -> &'static str {
    match e {
        EdgeSharing::PerEdge => "per_edge",
        EdgeSharing::PerDestination => "per_destination",
        EdgeSharing::PerSource => "per_source",
    }
}

fn parse_epsilon(s: &str) -> Result<EpsilonMode> {
    match s {
        "per_coordinate" => Ok(EpsilonMode::PerCoordinate),
        "per_parameter" => Ok(EpsilonMode::PerParameter),
        _ => Err(Error::Config(format!(
            "unknown epsilon mode '{s}' (per_coordinate, per_parameter)"
        ))),
    }
}

fn noise_section(e: &mut Entries) -> Result<NoiseSpec> {
    let preset: Option<Preset> = e.take("noise.preset")?;
    let default_family = match preset {
        None => "delta",
        Some(_) => "bernoulli",
    };
    let family_name: String = e.take_or("noise.family", default_family.to_string())?;
    let context = match preset {
        Some(p) => format!("required by preset {p} with family {family_name}"),
        None => format!("required by family {family_name}"),
    };
    let family = match family_name.as_str() {
        "delta" => NoiseFamily::Delta,
        "bernoulli" => NoiseFamily::Bernoulli {
            p_drop: e.require("noise.p_drop", &context)?,
        },
        "normal" => NoiseFamily::Normal {
            mu: e.take_or("noise.mu", 1.0)?,
            sigma: e.require("noise.sigma", &context)?,
        },
        "uniform" => NoiseFamily::Uniform {
            a: e.require("noise.a", &context)?,
            b: e.require("noise.b", &context)?,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown noise.family '{other}' (delta, bernoulli, normal, uniform)"
            )))
        }
    };
    let mut spec = match preset {
        Some(p) => preset_spec(p, family).map_err(|err| Error::Config(format!("noise.preset: {err}")))?,
        None => NoiseSpec::new(family),
    };
    if let Some(v) = e.take("noise.share_layers")? {
        spec.sharing.share_layers = v;
    }
    if let Some(v) = e.take("noise.share_channels")? {
        spec.sharing.share_channels = v;
    }
    if let Some((v, line)) = e.take_raw("noise.edges") {
        spec.sharing.edges = parse_edges(&v).map_err(|err| Error::Config(format!("line {line}: {err}")))?;
    }
    if let Some(v) = e.take("noise.normalize_degree")? {
        spec.normalize_degree = v;
    }
    if let Some(v) = e.take("noise.resample_per_layer")? {
        spec.resample_per_layer = v;
    }
    if let Some(v) = e.take("noise.mask_self_loops")? {
        spec.mask_self_loops = v;
    }
    spec.validate()?;
    Ok(spec)
}

fn vi_section(e: &mut Entries, dataset: &str) -> Result<ViConfig> {
    let granularity: Granularity = e.take_or("vi.granularity", Granularity::Scalar)?;
    let (mu0, ls0, sp) = tuned_defaults(dataset, granularity);
    let mut cfg = ViConfig::new(granularity);
    cfg.mu0 = e.take_or("vi.mu0", mu0)?;
    cfg.log_sigma0 = e.take_or("vi.log_sigma0", ls0)?;
    cfg.sigma_prior = e.take_or("vi.sigma_prior", sp)?;
    if let Some((v, line)) = e.take_raw("vi.epsilon") {
        cfg.epsilon = parse_epsilon(&v).map_err(|err| Error::Config(format!("line {line}: {err}")))?;
    }
    cfg.resample_per_layer = e.take_or("vi.resample_per_layer", cfg.resample_per_layer)?;
    cfg.mask_self_loops = e.take_or("vi.mask_self_loops", cfg.mask_self_loops)?;
    cfg.encoder_hidden = e.take_or("vi.encoder_hidden", cfg.encoder_hidden)?;
    cfg.kl_weight = e.take_or("vi.kl_weight", cfg.kl_weight)?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
        }
        Self::from_entries(Entries { map })
    }

    /// Applies `key=value` overrides on top of `text`.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut merged: BTreeMap<String, String> = BTreeMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected 'key = value', got '{line}'")))?;
            merged.insert(k.trim().into(), v.trim().into());
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            merged.insert(k.trim().into(), v.trim().into());
        }
        let joined: String = merged.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        Self::parse(&joined)
    }

    fn from_entries(mut e: Entries) -> Result<Self> {
        let model = ModelSection {
            kind: e.take_or("model.kind", LayerKind::Gcn)?,
            hidden: e.take_or("model.hidden", crate::layers::DEFAULT_HIDDEN)?,
            depth: e.take_or("model.depth", 2)?,
        };
        let data = DataSection {
            dataset: e.take_or("data.dataset", "cora".to_string())?,
            dir: e.take::<String>("data.dir")?.map(PathBuf::from),
            split: e.take_or("data.split", SplitPolicy::PlanetoidLike)?,
            n_train: e.take_or("data.n_train", 140)?,
            n_val: e.take_or("data.n_val", 500)?,
            n_test: e.take_or("data.n_test", 1000)?,
            row_normalize: e.take_or("data.row_normalize", true)?,
            synthetic: e.take_or("data.synthetic", false)?,
        };
        let defaults = TrainConfig::default();
        let epochs: usize = e.take_or("train.epochs", defaults.epochs)?;
        let patience: usize = match e.take("train.patience")? {
            Some(p) => p,
            None => defaults.patience.map_or(0, |p| p.min(epochs)),
        };
        let train = TrainConfig {
            lr: e.take_or("train.lr", defaults.lr)?,
            l2_first_layer: e.take_or("train.l2", defaults.l2_first_layer)?,
            epochs,
            patience: (patience > 0).then_some(patience),
            mc_samples: e.take_or("train.mc_samples", defaults.mc_samples)?,
            val_samples: e.take_or("train.val_samples", defaults.val_samples)?,
            elbo_samples: e.take_or("train.elbo_samples", defaults.elbo_samples)?,
            loss: e.take_or("train.loss", LossKind::CrossEntropy)?,
            seed: e.take_or("train.seed", defaults.seed)?,
        };
        train.validate()?;
        let runs = e.take_or("train.runs", 1usize)?;
        if runs == 0 {
            return Err(Error::Config("train.runs must be positive".into()));
        }
        let method_name: String = e.take_or("train.method", "noise".to_string())?;
        let method = match method_name.as_str() {
            "noise" => Method::Noise(noise_section(&mut e)?),
            "vi" => Method::Vi(vi_section(&mut e, &data.dataset)?),
            "bbb" => Method::Bbb {
                log_sigma0: e.take_or("vi.log_sigma0", -5.0)?,
                prior_sigma: e.take_or("vi.sigma_prior", 1.0)?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown train.method '{other}' (noise, vi, bbb)"
                )))
            }
        };
        if let Some((k, (_, line))) = e.map.iter().next() {
            let hint = if k.starts_with("noise.") || k.starts_with("vi.") {
                format!(" (not used with train.method = {method_name})")
            } else {
                String::new()
            };
            return Err(Error::Config(format!("line {line}: unknown key {k}{hint}")));
        }
        Ok(Self {
            model,
            method,
            train,
            data,
            runs,
        })
    }

    /// Fully resolved configuration in the input format.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let _ = writeln!(s, "model.kind = {}", m.kind.name());
        let _ = writeln!(s, "model.hidden = {}", m.hidden);
        let _ = writeln!(s, "model.depth = {}", m.depth);
        let d = &self.data;
        let _ = writeln!(s, "data.dataset = {}", d.dataset);
        if let Some(dir) = &d.dir {
            let _ = writeln!(s, "data.dir = {}", dir.display());
        }
        let split = match d.split {
            SplitPolicy::PlanetoidLike => "planetoid_like",
            SplitPolicy::Random => "random",
        };
        let _ = writeln!(s, "data.split = {split}");
        let _ = writeln!(s, "data.n_train = {}", d.n_train);
        let _ = writeln!(s, "data.n_val = {}", d.n_val);
        let _ = writeln!(s, "data.n_test = {}", d.n_test);
        let _ = writeln!(s, "data.row_normalize = {}", d.row_normalize);
        let _ = writeln!(s, "data.synthetic = {}", d.synthetic);
        let t = &self.train;
        let _ = writeln!(s, "train.lr = {}", t.lr);
        let _ = writeln!(s, "train.l2 = {}", t.l2_first_layer);
        let _ = writeln!(s, "train.epochs = {}", t.epochs);
        let _ = writeln!(s, "train.patience = {}", t.patience.unwrap_or(0));
        let _ = writeln!(s, "train.mc_samples = {}", t.mc_samples);
        let _ = writeln!(s, "train.val_samples = {}", t.val_samples);
        let _ = writeln!(s, "train.elbo_samples = {}", t.elbo_samples);
        let _ = writeln!(s, "train.loss = {}", t.loss.name());
        let _ = writeln!(s, "train.seed = {}", t.seed);
        let _ = writeln!(s, "train.runs = {}", self.runs);
        match &self.method {
            Method::Noise(spec) => {
                let _ = writeln!(s, "train.method = noise");
                match spec.family {
                    NoiseFamily::Delta => {
                        let _ = writeln!(s, "noise.family = delta");
                    }
                    NoiseFamily::Bernoulli { p_drop } => {
                        let _ = writeln!(s, "noise.family = bernoulli\nnoise.p_drop = {p_drop}");
                    }
                    NoiseFamily::Normal { mu, sigma } => {
                        let _ = writeln!(s, "noise.family = normal\nnoise.mu = {mu}\nnoise.sigma = {sigma}");
                    }
                    NoiseFamily::Uniform { a, b } => {
                        let _ = writeln!(s, "noise.family = uniform\nnoise.a = {a}\nnoise.b = {b}");
                    }
                }
                let _ = writeln!(s, "noise.share_layers = {}", spec.sharing.share_layers);
                let _ = writeln!(s, "noise.share_channels = {}", spec.sharing.share_channels);
                let _ = writeln!(s, "noise.edges = {}", edges_name(spec.sharing.edges));
                let _ = writeln!(s, "noise.normalize_degree = {}", spec.normalize_degree);
                let _ = writeln!(s, "noise.resample_per_layer = {}", spec.resample_per_layer);
                let _ = writeln!(s, "noise.mask_self_loops = {}", spec.mask_self_loops);
            }
            Method::Vi(v) => {
                let _ = writeln!(s, "train.method = vi");
                let _ = writeln!(s, "vi.granularity = {}", v.granularity.name());
                let _ = writeln!(s, "vi.mu0 = {}", v.mu0);
                let _ = writeln!(s, "vi.log_sigma0 = {}", v.log_sigma0);
                let _ = writeln!(s, "vi.sigma_prior = {}", v.sigma_prior);
                let eps = match v.epsilon {
                    EpsilonMode::PerCoordinate => "per_coordinate",
                    EpsilonMode::PerParameter => "per_parameter",
                };
                let _ = writeln!(s, "vi.epsilon = {eps}");
                let _ = writeln!(s, "vi.resample_per_layer = {}", v.resample_per_layer);
                let _ = writeln!(s, "vi.mask_self_loops = {}", v.mask_self_loops);
                let _ = writeln!(s, "vi.encoder_hidden = {}", v.encoder_hidden);
                let _ = writeln!(s, "vi.kl_weight = {}", v.kl_weight);
            }
            Method::Bbb {
                log_sigma0,
                prior_sigma,
            } => {
                let _ = writeln!(s, "train.method = bbb");
                let _ = writeln!(s, "vi.log_sigma0 = {log_sigma0}");
                let _ = writeln!(s, "vi.sigma_prior = {prior_sigma}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropedge_without_rate_names_the_key() {
        let err = RunConfig::parse("noise.preset = dropedge\n").unwrap_err();
        assert!(err.to_string().contains("noise.p_drop"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("model.depht = 3\n").unwrap_err();
        assert!(err.to_string().contains("model.depht"), "{err}");
    }

    #[test]
    fn manifest_round_trips() {
        for text in [
            "noise.preset = dropedge\nnoise.p_drop = 0.3\nmodel.depth = 4\n",
            "train.method = vi\nvi.granularity = per_edge\ndata.dataset = citeseer\n",
            "train.method = bbb\ntrain.patience = 0\n",
        ] {
            let a = RunConfig::parse(text).unwrap();
            let b = RunConfig::parse(&a.manifest()).unwrap();
            assert_eq!(a.manifest(), b.manifest());
        }
    }

    #[test]
    fn vi_defaults_follow_dataset() {
        let c = RunConfig::parse("train.method = vi\nvi.granularity = scalar\ndata.dataset = citeseer\n").unwrap();
        let Method::Vi(v) = c.method else { panic!() };
        assert_eq!((v.mu0, v.log_sigma0, v.sigma_prior), (0.5, 0.0, 0.5));
    }
}
