use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::{Graph, SparseMatrix};
use crate::layers::sample_stream;
use crate::noise::{effective_adjacency, sample_mask, NoiseFamily, NoiseSpec};

/// `tr(Xᵀ Δ̃ X)`, computed as `‖X‖² − ⟨X, ÂX⟩`.
pub fn dirichlet_energy(g: &Graph, x: &ArrayView2<f64>) -> Result<f64> {
    let adj = g.sym_normalized_adjacency();
    quadratic_form(&adj, x)
}

fn quadratic_form(adj: &SparseMatrix, x: &ArrayView2<f64>) -> Result<f64> {
    if x.nrows() != adj.shape().0 {
        return Err(Error::Shape {
            op: "dirichlet_energy",
            lhs: adj.shape(),
            rhs: x.dim(),
        });
    }
    let ax = adj.matmul(x)?;
    Ok(x.iter().zip(ax.iter()).map(|(&v, &a)| v * (v - a)).sum())
}

/// `½ Σ_ij A_ij (f_i/√(1+d_i) − f_j/√(1+d_j))²` for a scalar field.
pub fn dirichlet_energy_pairwise(g: &Graph, f: &[f64]) -> Result<f64> {
    if f.len() != g.n_nodes() {
        return Err(Error::Shape {
            op: "dirichlet_energy_pairwise",
            lhs: (g.n_nodes(), 1),
            rhs: (f.len(), 1),
        });
    }
    let scaled: Vec<f64> = f
        .iter()
        .enumerate()
        .map(|(i, &v)| v / ((1 + g.degree(i)) as f64).sqrt())
        .collect();
    Ok(0.5
        * g.adjacency()
            .iter()
            .map(|(i, j)| (scaled[i] - scaled[j]).powi(2))
            .sum::<f64>())
}

/// What a trajectory records after each smoothing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyScale {
    /// `E(X)`.
    Absolute,
    /// `E(X) / ‖X‖²`, the Rayleigh quotient. Zero signals report zero.
    Normalized,
}

/// Per-layer energy statistics; index 0 is the input signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrajectory {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl EnergyTrajectory {
    pub fn layers(&self) -> usize {
        self.mean.len() - 1
    }
}

fn scaled_energy(adj: &SparseMatrix, x: &Matrix, scale: EnergyScale) -> Result<f64> {
    let e = quadratic_form(adj, &x.view())?;
    Ok(match scale {
        EnergyScale::Absolute => e,
        EnergyScale::Normalized => {
            let n2: f64 = x.iter().map(|v| v * v).sum();
            if n2 > 0.0 {
                e / n2
            } else {
                0.0
            }
        }
    })
}

/// Repeatedly applies `X ← (Â ⊙ Z_l) X` with a fresh mask per layer and
/// records the energy after each step. Run `r` draws from
/// `sample_stream(seed, r)`.
pub fn oversmoothing_trajectory(
    g: &Graph,
    signal: &Matrix,
    spec: &NoiseSpec,
    layers: usize,
    runs: usize,
    seed: u64,
    scale: EnergyScale,
) -> Result<EnergyTrajectory> {
    if layers == 0 || runs == 0 {
        return Err(Error::InvalidArgument("need at least one layer and one run".into()));
    }
    let adj = g.sym_normalized_adjacency();
    let channels = signal.ncols();
    let mut energies = Array2::<f64>::zeros((runs, layers + 1));
    for r in 0..runs {
        let mut rng = sample_stream(seed, r as u64);
        let mut x = signal.clone();
        energies[[r, 0]] = scaled_energy(&adj, &x, scale)?;
        for l in 1..=layers {
            x = smooth_step(g, spec, &adj, &x, channels, &mut rng)?;
            energies[[r, l]] = scaled_energy(&adj, &x, scale)?;
        }
    }
    let n = runs as f64;
    let mean: Vec<f64> = (0..=layers).map(|l| energies.column(l).sum() / n).collect();
    let std = (0..=layers)
        .map(|l| {
            let m = mean[l];
            (energies.column(l).iter().map(|e| (e - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect();
    Ok(EnergyTrajectory { mean, std })
}

fn smooth_step<R: Rng + ?Sized>(
    g: &Graph,
    spec: &NoiseSpec,
    adj: &SparseMatrix,
    x: &Matrix,
    channels: usize,
    rng: &mut R,
) -> Result<Matrix> {
    if spec.is_delta() {
        return adj.matmul(&x.view());
    }
    let mask = sample_mask(spec, g, &[channels], rng)?;
    let mut out = Matrix::zeros(x.raw_dim());
    for c in 0..channels {
        let eff = effective_adjacency(g, spec, &mask, 0, c)?;
        let col = eff.matmul(&x.column(c).insert_axis(ndarray::Axis(1)))?;
        out.column_mut(c).assign(&col.column(0));
    }
    Ok(out)
}

/// Normal, Uniform and Bernoulli noise with the given mean and variance.
/// The Bernoulli member requires `variance = mean (1 − mean)`.
pub fn matched_moment_families(mean: f64, variance: f64) -> Result<[(&'static str, NoiseFamily); 3]> {
    let keep = mean;
    if (variance - keep * (1.0 - keep)).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "no Bernoulli with mean {mean} and variance {variance}"
        )));
    }
    let half = (3.0 * variance).sqrt();
    Ok([
        (
            "normal",
            NoiseFamily::Normal {
                mu: mean,
                sigma: variance.sqrt(),
            },
        ),
        (
            "uniform",
            NoiseFamily::Uniform {
                a: mean - half,
                b: mean + half,
            },
        ),
        ("bernoulli", NoiseFamily::Bernoulli { p_drop: 1.0 - keep }),
    ])
}

/// Neighborhood aggregator over the self-looped pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphAggregator {
    Sum,
    Mean,
}

/// `ρ(ξ_q(X))` with one independent draw per `(entry, channel)`; a
/// `Delta` family gives the deterministic aggregate.
pub fn perturbed_aggregate<R: Rng + ?Sized>(
    g: &Graph,
    x: &Matrix,
    rho: GraphAggregator,
    q: NoiseFamily,
    rng: &mut R,
) -> Result<Matrix> {
    let pattern: &Arc<_> = g.augmented();
    if x.nrows() != g.n_nodes() {
        return Err(Error::Shape {
            op: "perturbed_aggregate",
            lhs: (g.n_nodes(), g.n_nodes()),
            rhs: x.dim(),
        });
    }
    let c = x.ncols();
    let mut out = Matrix::zeros(x.raw_dim());
    for r in 0..pattern.n_rows() {
        let range = pattern.row_range(r);
        let norm = match rho {
            GraphAggregator::Sum => 1.0,
            GraphAggregator::Mean => 1.0 / range.len() as f64,
        };
        for e in range {
            let src = pattern.indices()[e];
            for k in 0..c {
                out[[r, k]] += norm * q.sample(rng) * x[[src, k]];
            }
        }
    }
    Ok(out)
}

/// Monte-Carlo estimate of `E_q[E(ρ(ξ_q(X)))]` with its standard error.
pub fn expected_perturbed_energy<R: Rng + ?Sized>(
    g: &Graph,
    x: &Matrix,
    rho: GraphAggregator,
    q: NoiseFamily,
    draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least two draws".into()));
    }
    let adj = g.sym_normalized_adjacency();
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..draws {
        let agg = perturbed_aggregate(g, x, rho, q, rng)?;
        let e = quadratic_form(&adj, &agg.view())?;
        sum += e;
        sum2 += e * e;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn two_node_energy() {
        let g = Graph::undirected(&[(0, 1)], Array2::zeros((2, 1)), None).unwrap();
        let f = array![[1.0], [0.0]];
        assert_abs_diff_eq!(dirichlet_energy(&g, &f.view()).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            dirichlet_energy_pairwise(&g, &[1.0, 0.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn nullspace_has_zero_energy() {
        let g = Graph::undirected(&[(0, 1), (1, 2), (1, 3)], Array2::zeros((4, 1)), None).unwrap();
        let f: Vec<f64> = (0..4).map(|i| 2.5 * ((1 + g.degree(i)) as f64).sqrt()).collect();
        let x = Array2::from_shape_vec((4, 1), f.clone()).unwrap();
        assert_abs_diff_eq!(dirichlet_energy(&g, &x.view()).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dirichlet_energy_pairwise(&g, &f).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matched_moments() {
        for (_, q) in matched_moment_families(0.5, 0.25).unwrap() {
            assert_abs_diff_eq!(q.mean(), 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(q.variance(), 0.25, epsilon = 1e-15);
        }
        assert!(matched_moment_families(0.5, 0.3).is_err());
    }
}
