//! Multiplicative edge-weight noise and its sharing structures.
//!
//! A mask is the logical tensor `Z[l, c, u, v]`, stored per layer as an
//! `nnz × k` matrix aligned with the entries of the self-looped adjacency
//! pattern (`k = 1` when channels share a draw). Dropout, FastGCN, DropEdge
//! and graph DropConnect are presets over the same sampler.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{Csr, Graph, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    /// Point mass at 1.
    Delta,
    /// Weight is 0 with probability `p_drop`, else 1.
    Bernoulli {
        p_drop: f64,
    },
    Normal {
        mu: f64,
        sigma: f64,
    },
    Uniform {
        a: f64,
        b: f64,
    },
}

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseFamily::Delta => true,
            NoiseFamily::Bernoulli { p_drop } => (0.0..=1.0).contains(&p_drop),
            NoiseFamily::Normal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
            NoiseFamily::Uniform { a, b } => a.is_finite() && b.is_finite() && a <= b,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Noise(format!("invalid parameters for {self}")))
        }
    }

    pub fn is_delta(&self) -> bool {
        matches!(self, NoiseFamily::Delta)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NoiseFamily::Delta => 1.0,
            NoiseFamily::Bernoulli { p_drop } => 1.0 - p_drop,
            NoiseFamily::Normal { mu, .. } => mu,
            NoiseFamily::Uniform { a, b } => 0.5 * (a + b),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseFamily::Delta => 0.0,
            NoiseFamily::Bernoulli { p_drop } => p_drop * (1.0 - p_drop),
            NoiseFamily::Normal { sigma, .. } => sigma * sigma,
            NoiseFamily::Uniform { a, b } => (b - a) * (b - a) / 12.0,
        }
    }

    /// One draw. `Delta` consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseFamily::Delta => 1.0,
            NoiseFamily::Bernoulli { p_drop } => {
                if rng.random::<f64>() < p_drop {
                    0.0
                } else {
                    1.0
                }
            }
            NoiseFamily::Normal { mu, sigma } => {
                let e: f64 = StandardNormal.sample(rng);
                mu + sigma * e
            }
            NoiseFamily::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
        }
    }

    /// Fills `out` with independent draws from a generator seeded by `rng`.
    pub fn fill<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        match *self {
            NoiseFamily::Delta => out.fill(1.0),
            NoiseFamily::Bernoulli { p_drop } => {
                let mut fast = SmallRng::from_rng(&mut &mut *rng);
                for v in out.iter_mut() {
                    *v = if fast.random::<f64>() < p_drop { 0.0 } else { 1.0 };
                }
            }
            NoiseFamily::Normal { mu, sigma } => {
                let mut fast = SmallRng::from_rng(&mut &mut *rng);
                for v in out.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut fast);
                    *v = mu + sigma * e;
                }
            }
            NoiseFamily::Uniform { a, b } => {
                let mut fast = SmallRng::from_rng(&mut &mut *rng);
                for v in out.iter_mut() {
                    *v = a + (b - a) * fast.random::<f64>();
                }
            }
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseFamily::Delta => write!(f, "delta"),
            NoiseFamily::Bernoulli { p_drop } => write!(f, "bernoulli(p_drop={p_drop})"),
            NoiseFamily::Normal { mu, sigma } => write!(f, "normal({mu},{sigma})"),
            NoiseFamily::Uniform { a, b } => write!(f, "uniform({a},{b})"),
        }
    }
}

/// How draws are shared along the edge axes of one `(layer, channel)` slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSharing {
    /// Independent draw for every stored entry.
    PerEdge,
    /// One draw per destination node, applied to its whole incoming row.
    PerDestination,
    /// One draw per source node, i.e. a diagonal node mask on the right.
    PerSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sharing {
    pub share_layers: bool,
    pub share_channels: bool,
    pub edges: EdgeSharing,
}

impl Sharing {
    pub const INDEPENDENT: Sharing = Sharing {
        share_layers: false,
        share_channels: false,
        edges: EdgeSharing::PerEdge,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Dropout,
    FastGcn,
    DropEdge,
    Gdc,
    StagFull,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Dropout,
        Preset::FastGcn,
        Preset::DropEdge,
        Preset::Gdc,
        Preset::StagFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Dropout => "dropout",
            Preset::FastGcn => "fastgcn",
            Preset::DropEdge => "dropedge",
            Preset::Gdc => "gdc",
            Preset::StagFull => "stag_full",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::Noise(format!("unknown preset '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub sharing: Sharing,
    /// Rescale every masked row to its unmasked row sum.
    pub normalize_degree: bool,
    /// When false a single draw is reused by every layer.
    pub resample_per_layer: bool,
    /// When false self-loop entries keep weight 1.
    pub mask_self_loops: bool,
}

impl NoiseSpec {
    /// Fully independent noise with default flags.
    pub fn new(family: NoiseFamily) -> Self {
        Self {
            family,
            sharing: Sharing::INDEPENDENT,
            normalize_degree: false,
            resample_per_layer: true,
            mask_self_loops: true,
        }
    }

    pub fn delta() -> Self {
        Self::new(NoiseFamily::Delta)
    }

    pub fn with_sharing(mut self, sharing: Sharing) -> Self {
        self.sharing = sharing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()
    }

    pub fn is_delta(&self) -> bool {
        self.family.is_delta()
    }

    /// Whether every layer reads the same draw.
    pub fn layers_shared(&self) -> bool {
        self.sharing.share_layers || !self.resample_per_layer
    }
}

/// Builds the spec for a named regularizer.
///
/// `dropout` accepts Bernoulli or Normal noise, `fastgcn`, `dropedge` and `gdc`
/// require Bernoulli, `stag_full` accepts any family.
pub fn preset_spec(preset: Preset, family: NoiseFamily) -> Result<NoiseSpec> {
    family.validate()?;
    let bernoulli = matches!(family, NoiseFamily::Bernoulli { .. });
    let allowed = match preset {
        Preset::Dropout => bernoulli || matches!(family, NoiseFamily::Normal { .. }),
        Preset::FastGcn | Preset::DropEdge | Preset::Gdc => bernoulli,
        Preset::StagFull => true,
    };
    if !allowed {
        return Err(Error::Noise(format!("preset {preset} does not support {family}")));
    }
    let (sharing, normalize_degree) = match preset {
        Preset::Dropout => (
            Sharing {
                share_layers: false,
                share_channels: false,
                edges: EdgeSharing::PerDestination,
            },
            false,
        ),
        Preset::FastGcn => (
            Sharing {
                share_layers: true,
                share_channels: true,
                edges: EdgeSharing::PerSource,
            },
            false,
        ),
        Preset::DropEdge => (
            Sharing {
                share_layers: true,
                share_channels: true,
                edges: EdgeSharing::PerEdge,
            },
            false,
        ),
        Preset::Gdc => (Sharing::INDEPENDENT, true),
        Preset::StagFull => (Sharing::INDEPENDENT, false),
    };
    Ok(NoiseSpec {
        family,
        sharing,
        normalize_degree,
        resample_per_layer: true,
        mask_self_loops: true,
    })
}

/// Realized weights for one forward pass.
#[derive(Debug, Clone)]
pub struct MaskSample {
    layers: Vec<Arc<Array2<f64>>>,
    widths: Vec<usize>,
}

impl MaskSample {
    /// Wraps per-layer `nnz × 1` or `nnz × widths[l]` weights.
    pub fn from_layers(layers: Vec<Array2<f64>>, widths: Vec<usize>) -> Result<Self> {
        if layers.len() != widths.len() {
            return Err(Error::Noise(format!(
                "{} mask layers for {} widths",
                layers.len(),
                widths.len()
            )));
        }
        if let Some((l, m)) = layers
            .iter()
            .enumerate()
            .find(|(l, m)| m.ncols() != 1 && m.ncols() != widths[*l])
        {
            return Err(Error::Noise(format!(
                "layer {l} mask has {} channels, expected 1 or {}",
                m.ncols(),
                widths[l]
            )));
        }
        if layers.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("mask weights".into()));
        }
        Ok(Self {
            layers: layers.into_iter().map(Arc::new).collect(),
            widths,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// `nnz × 1` or `nnz × width(l)` weights of layer `l`.
    pub fn layer(&self, l: usize) -> &Arc<Array2<f64>> {
        &self.layers[l]
    }

    /// Weight of entry `e` in channel `c` of layer `l`.
    pub fn weight(&self, l: usize, c: usize, e: usize) -> f64 {
        let m = &self.layers[l];
        m[[e, if m.ncols() == 1 { 0 } else { c }]]
    }
}

fn slice_shape(spec: &NoiseSpec, g: &Graph, width: usize) -> (usize, usize) {
    let k = if spec.sharing.share_channels { 1 } else { width };
    (g.augmented().nnz(), k)
}

fn draw_slice<R: Rng + ?Sized>(spec: &NoiseSpec, g: &Graph, width: usize, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros(slice_shape(spec, g, width));
    draw_into(spec, g, &mut out, rng);
    out
}

fn draw_into<R: Rng + ?Sized>(spec: &NoiseSpec, g: &Graph, out: &mut Array2<f64>, rng: &mut R) {
    let pattern = g.augmented();
    let k = out.ncols();
    match spec.sharing.edges {
        EdgeSharing::PerEdge => {
            spec.family.fill(out.as_slice_mut().expect("standard layout"), rng);
        }
        EdgeSharing::PerDestination | EdgeSharing::PerSource => {
            let mut nodes = Array2::zeros((g.n_nodes(), k));
            spec.family.fill(nodes.as_slice_mut().expect("fresh array"), rng);
            let owner = match spec.sharing.edges {
                EdgeSharing::PerDestination => pattern.entry_rows(),
                _ => pattern.indices(),
            };
            for (mut row, &v) in out.rows_mut().into_iter().zip(owner) {
                row.assign(&nodes.row(v));
            }
        }
    }
    if !spec.mask_self_loops {
        for &e in g.self_loop_entries() {
            out.row_mut(e).fill(1.0);
        }
    }
}

/// Draws one mask for a model whose layer `l` consumes `widths[l]` input channels.
///
/// When layers share a draw and widths differ, the draw is made at the widest
/// layer and every layer reads its leading channels.
pub fn sample_mask<R: Rng + ?Sized>(spec: &NoiseSpec, g: &Graph, widths: &[usize], rng: &mut R) -> Result<MaskSample> {
    spec.validate()?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Noise(format!("layer widths must be positive, got {widths:?}")));
    }
    let layers = if spec.layers_shared() {
        let widest = *widths.iter().max().expect("non-empty");
        let shared = Arc::new(draw_slice(spec, g, widest, rng));
        widths
            .iter()
            .map(|&w| {
                if shared.ncols() == 1 || w == widest {
                    Arc::clone(&shared)
                } else {
                    Arc::new(shared.slice(s![.., ..w]).to_owned())
                }
            })
            .collect()
    } else {
        widths.iter().map(|&w| Arc::new(draw_slice(spec, g, w, rng))).collect()
    };
    Ok(MaskSample {
        layers,
        widths: widths.to_vec(),
    })
}

/// Same draw as [`sample_mask`] for the same `rng` state, written into the
/// buffers of `buf` when it holds uniquely owned layers of the right shapes.
pub fn resample_mask<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    g: &Graph,
    widths: &[usize],
    rng: &mut R,
    buf: &mut Option<MaskSample>,
) -> Result<()> {
    if !spec.layers_shared() {
        if let Some(mask) = buf.as_mut().filter(|m| m.widths == widths) {
            let reusable = mask
                .layers
                .iter_mut()
                .zip(widths)
                .all(|(m, &w)| m.dim() == slice_shape(spec, g, w) && Arc::get_mut(m).is_some());
            if reusable {
                spec.validate()?;
                for m in &mut mask.layers {
                    draw_into(spec, g, Arc::get_mut(m).expect("checked unique"), rng);
                }
                return Ok(());
            }
        }
    }
    *buf = Some(sample_mask(spec, g, widths, rng)?);
    Ok(())
}

/// Folds degree renormalization into mask weights for aggregation with `coef`.
///
/// Each `(row, channel)` is scaled so that `Σ_e coef[e] w[e, c]` matches
/// `Σ_e coef[e]`. Rows whose masked sum is zero stay zero.
pub fn renormalize_rows(pattern: &Csr, coef: &[f64], weights: &Array2<f64>) -> Array2<f64> {
    let k = weights.ncols();
    let mut out = weights.clone();
    for r in 0..pattern.n_rows() {
        let range = pattern.row_range(r);
        let target: f64 = range.clone().map(|e| coef[e]).sum();
        for c in 0..k {
            let masked: f64 = range.clone().map(|e| coef[e] * weights[[e, c]]).sum();
            if masked != 0.0 {
                let scale = target / masked;
                for e in range.clone() {
                    out[[e, c]] *= scale;
                }
            }
        }
    }
    out
}

/// `Â ⊙ Z[l, c]`, renormalized per row when the spec asks for it.
pub fn effective_adjacency(g: &Graph, spec: &NoiseSpec, mask: &MaskSample, l: usize, c: usize) -> Result<SparseMatrix> {
    if l >= mask.depth() || c >= mask.widths()[l] {
        return Err(Error::InvalidArgument(format!(
            "layer {l} channel {c} outside mask of widths {:?}",
            mask.widths()
        )));
    }
    let base = g.sym_normalized_adjacency();
    let pattern = g.augmented();
    let mut values: Vec<f64> = base
        .values()
        .iter()
        .enumerate()
        .map(|(e, &a)| a * mask.weight(l, c, e))
        .collect();
    if spec.normalize_degree {
        for r in 0..pattern.n_rows() {
            let range = pattern.row_range(r);
            let target: f64 = base.values()[range.clone()].iter().sum();
            let masked: f64 = values[range.clone()].iter().sum();
            if masked != 0.0 {
                values[range].iter_mut().for_each(|v| *v *= target / masked);
            }
        }
    }
    SparseMatrix::new(Arc::clone(pattern), values)
}
