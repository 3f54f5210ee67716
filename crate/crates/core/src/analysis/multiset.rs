use std::collections::HashSet;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::noise::NoiseFamily;

/// Finite multiset of reals, stored as a list.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiset {
    elements: Vec<f64>,
}

impl Multiset {
    pub fn new(elements: Vec<f64>) -> Self {
        Self { elements }
    }

    pub fn elements(&self) -> &[f64] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains_zero(&self) -> bool {
        self.elements.contains(&0.0)
    }

    /// Sorted copy of the elements.
    pub fn canonical(&self) -> Vec<f64> {
        let mut v = self.elements.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn eq_up_to_permutation(&self, other: &Multiset) -> bool {
        self.canonical() == other.canonical()
    }

    /// Same multiset with exact zeros removed.
    pub fn without_zeros(&self) -> Multiset {
        Multiset::new(self.elements.iter().copied().filter(|&x| x != 0.0).collect())
    }

    /// Maps every element through `exp`, which is injective onto the positive reals.
    pub fn exp_shift(&self) -> Multiset {
        Multiset::new(self.elements.iter().map(|x| x.exp()).collect())
    }

    /// `ξ_q(X)`: every element multiplied by an independent draw from `q`.
    pub fn perturb<R: Rng + ?Sized>(&self, q: &NoiseFamily, rng: &mut R) -> Multiset {
        Multiset::new(self.elements.iter().map(|&x| q.sample(rng) * x).collect())
    }
}

impl From<&[f64]> for Multiset {
    fn from(v: &[f64]) -> Self {
        Multiset::new(v.to_vec())
    }
}

impl fmt::Display for Multiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.elements.iter().map(|x| format!("{x}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Sum,
    Mean,
    Max,
    Min,
    /// Population standard deviation.
    Std,
}

impl Aggregator {
    pub const ALL: [Aggregator; 5] = [
        Aggregator::Sum,
        Aggregator::Mean,
        Aggregator::Max,
        Aggregator::Min,
        Aggregator::Std,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Sum => "SUM",
            Aggregator::Mean => "MEAN",
            Aggregator::Max => "MAX",
            Aggregator::Min => "MIN",
            Aggregator::Std => "STD",
        }
    }

    /// Aggregate of a non-empty slice.
    pub fn apply(self, x: &[f64]) -> f64 {
        debug_assert!(!x.is_empty());
        let n = x.len() as f64;
        match self {
            Aggregator::Sum => x.iter().sum(),
            Aggregator::Mean => x.iter().sum::<f64>() / n,
            Aggregator::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Min => x.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregator::Std => {
                let m = x.iter().sum::<f64>() / n;
                (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Exp,
    Relu,
    Identity,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Exp => x.exp(),
            Transform::Relu => x.max(0.0),
            Transform::Identity => x,
        }
    }
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Distance between two independent estimates in joint standard errors.
    pub fn separation(&self, other: &McEstimate) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        (self.mean - other.mean).abs() / se
    }
}

/// Estimates `E_q[σ(ρ(ξ_q(X)))]` from `samples` draws.
pub fn expected_stochastic_aggregate<R: Rng + ?Sized>(
    x: &Multiset,
    rho: Aggregator,
    sigma: Transform,
    q: &NoiseFamily,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty multiset".into()));
    }
    let mut buf = vec![0.0; x.len()];
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..samples {
        for (b, &v) in buf.iter_mut().zip(x.elements()) {
            *b = q.sample(rng) * v;
        }
        let s = sigma.apply(rho.apply(&buf));
        sum += s;
        sum2 += s * s;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = if samples > 1 {
        ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples,
    })
}

fn reject_zeros(x: &Multiset, what: &str) -> Result<()> {
    if x.contains_zero() {
        return Err(Error::InvalidArgument(format!(
            "{what} requires nonzero elements; {x} contains 0. Use the Monte-Carlo \
             estimate or map elements onto the positive reals first (exp_shift)"
        )));
    }
    Ok(())
}

/// `E[exp(SUM(ξ_q(X)))]` for `q = Uniform(0, 1)`: `∏ (e^{x_i} − 1) / x_i`.
pub fn uniform_exp_sum_closed_form(x: &Multiset) -> Result<f64> {
    reject_zeros(x, "the closed form")?;
    Ok(x.elements().iter().map(|&v| v.exp_m1() / v).product())
}

/// `∏_{x_i ≠ 0} (e^{x_i} − 1)`, the closed form without the `∏ x_i` denominator.
pub fn uniform_exp_sum_numerator(x: &Multiset) -> f64 {
    x.elements()
        .iter()
        .filter(|&&v| v != 0.0)
        .map(|&v| v.exp_m1())
        .product()
}

/// Whether `Σ xⁿ = Σ yⁿ` for every `1 ≤ n ≤ n_max`, within relative tolerance 1e-9.
///
/// For nonzero reals and `n_max ≥ max(|X|, |Y|)` this holds exactly when
/// the multisets are equal.
pub fn power_sum_equal(x: &Multiset, y: &Multiset, n_max: usize) -> Result<bool> {
    reject_zeros(x, "power_sum_equal")?;
    reject_zeros(y, "power_sum_equal")?;
    let need = x.len().max(y.len());
    if n_max < need {
        return Err(Error::InvalidArgument(format!(
            "n_max = {n_max} is below the larger cardinality {need}"
        )));
    }
    for n in 1..=n_max as i32 {
        let px: f64 = x.elements().iter().map(|v| v.powi(n)).sum();
        let py: f64 = y.elements().iter().map(|v| v.powi(n)).sum();
        if (px - py).abs() > 1e-9 * px.abs().max(py.abs()) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Multiplicity vectors over an underlying set, one class per distinct
/// non-empty multiset.
#[derive(Debug, Clone)]
pub struct MultisetClasses {
    pub underlying: Vec<f64>,
    pub multiplicities: Vec<Vec<usize>>,
}

impl MultisetClasses {
    /// All multiplicity vectors in `{0..=max}^k` except the empty multiset.
    pub fn enumerate(underlying: &[f64], max_multiplicity: usize) -> Self {
        let k = underlying.len();
        let base = max_multiplicity + 1;
        let total = base.pow(k as u32);
        let multiplicities = (1..total)
            .map(|mut code| {
                let mut m = vec![0; k];
                for slot in m.iter_mut() {
                    *slot = code % base;
                    code /= base;
                }
                m
            })
            .collect();
        Self {
            underlying: underlying.to_vec(),
            multiplicities,
        }
    }

    pub fn len(&self) -> usize {
        self.multiplicities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multiplicities.is_empty()
    }

    pub fn multiset(&self, class: usize) -> Multiset {
        let mut v = Vec::new();
        for (&u, &m) in self.underlying.iter().zip(&self.multiplicities[class]) {
            v.extend(std::iter::repeat_n(u, m));
        }
        Multiset::new(v)
    }

    /// Deterministic aggregate feature of every class.
    pub fn aggregate_features(&self, rho: Aggregator) -> Vec<f64> {
        (0..self.len())
            .map(|c| rho.apply(self.multiset(c).elements()))
            .collect()
    }

    /// `k` concatenated draws of `SUM(ξ_q(X))` per class, row-major `len × k`.
    pub fn stochastic_features<R: Rng + ?Sized>(&self, q: &NoiseFamily, k: usize, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * k);
        for c in 0..self.len() {
            let x = self.multiset(c);
            for _ in 0..k {
                out.push(x.perturb(q, rng).elements().iter().sum());
            }
        }
        out
    }

    /// Best achievable accuracy from MEAN alone, as an exact fraction
    /// `(distinct means, classes)`. Requires integer-valued underlying sets.
    pub fn mean_collision_bound(&self) -> Result<(usize, usize)> {
        if self.underlying.iter().any(|u| u.fract() != 0.0) {
            return Err(Error::InvalidArgument(
                "exact MEAN bucketing needs an integer underlying set".into(),
            ));
        }
        let mut seen = HashSet::new();
        for m in &self.multiplicities {
            let num: i64 = self.underlying.iter().zip(m).map(|(&u, &c)| u as i64 * c as i64).sum();
            let den: i64 = m.iter().map(|&c| c as i64).sum();
            let g = gcd(num.unsigned_abs(), den as u64) as i64;
            seen.insert((num / g, den / g));
        }
        Ok((seen.len(), self.len()))
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Multiset pairs indistinguishable by at least one standard aggregator.
pub fn table_pairs() -> [(Multiset, Multiset); 4] {
    let m = |v: &[f64]| Multiset::from(v);
    [
        (m(&[2.0, 2.0]), m(&[0.0, 4.0])),
        (m(&[0.0, 2.0, 2.0]), m(&[0.0, 0.0, 2.0])),
        (m(&[0.0, 2.0, 2.0, 4.0]), m(&[0.0, 0.0, 4.0, 4.0])),
        (m(&[1.0, 1.0, 4.0]), m(&[0.0, 3.0, 3.0])),
    ]
}

/// Expected separations for [`table_pairs`], in [`Aggregator::ALL`] order.
pub const TABLE_DISTINGUISHED: [[bool; 5]; 4] = [
    [false, false, true, true, true],
    [true, true, false, false, false],
    [false, false, false, false, true],
    [false, false, true, true, false],
];

/// One line of the distinguishability report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub pair_id: usize,
    pub aggregator: String,
    pub value_x: f64,
    pub value_y: f64,
    pub distinguished: bool,
}

/// Label of the stochastic statistic in the report.
pub const STOCHASTIC_ROW: &str = "E[exp(SUM(xi_uniform01))]";

/// Deterministic aggregators plus the Monte-Carlo stochastic statistic for
/// each pair. Pairs count as separated beyond `z` joint standard errors.
pub fn distinguishability_report<R: Rng + ?Sized>(
    pairs: &[(Multiset, Multiset)],
    samples: usize,
    z: f64,
    rng: &mut R,
) -> Result<Vec<ReportRow>> {
    let q = NoiseFamily::Uniform { a: 0.0, b: 1.0 };
    let mut rows = Vec::new();
    for (i, (x, y)) in pairs.iter().enumerate() {
        for rho in Aggregator::ALL {
            let (vx, vy) = (rho.apply(x.elements()), rho.apply(y.elements()));
            let distinguished = (vx - vy).abs() > 1e-12 * vx.abs().max(vy.abs()).max(1.0);
            rows.push(ReportRow {
                pair_id: i + 1,
                aggregator: rho.name().to_string(),
                value_x: vx,
                value_y: vy,
                distinguished,
            });
        }
        let ex = expected_stochastic_aggregate(x, Aggregator::Sum, Transform::Exp, &q, samples, rng)?;
        let ey = expected_stochastic_aggregate(y, Aggregator::Sum, Transform::Exp, &q, samples, rng)?;
        rows.push(ReportRow {
            pair_id: i + 1,
            aggregator: STOCHASTIC_ROW.to_string(),
            value_x: ex.mean,
            value_y: ey.mean,
            distinguished: ex.separation(&ey) > z,
        });
        let (cx, cy) = (
            uniform_exp_sum_closed_form(&x.without_zeros())?,
            uniform_exp_sum_closed_form(&y.without_zeros())?,
        );
        rows.push(ReportRow {
            pair_id: i + 1,
            aggregator: "closed_form".to_string(),
            value_x: cx,
            value_y: cy,
            distinguished: cx != cy,
        });
        let (nx, ny) = (uniform_exp_sum_numerator(x), uniform_exp_sum_numerator(y));
        rows.push(ReportRow {
            pair_id: i + 1,
            aggregator: "closed_form_numerator".to_string(),
            value_x: nx,
            value_y: ny,
            distinguished: nx != ny,
        });
    }
    Ok(rows)
}
