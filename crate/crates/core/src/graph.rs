//! Graph storage and the normalization algebra used by message passing.
//!
//! A [`Graph`] keeps the raw adjacency `A` (no self-loops) and, next to it,
//! the augmented pattern of `Ã = A + I` that every normalized operator is
//! defined on. Masks, effective adjacencies and the Laplacian all share that
//! augmented pattern, so per-entry arrays line up with [`Graph::augmented`]
//! entry order.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

/// Compressed sparse row structure (pattern only).
///
/// Entries are sorted by row, then column, and are unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    entry_rows: Vec<usize>,
}

impl Csr {
    /// Builds a pattern from arbitrary `(row, col)` pairs. Duplicates collapse.
    pub fn from_pairs<I>(n_rows: usize, n_cols: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        if let Some(&(r, c)) = pairs.iter().find(|&&(r, c)| r >= n_rows || c >= n_cols) {
            return Err(Error::Graph(format!(
                "entry ({r}, {c}) out of range for a {n_rows}x{n_cols} pattern"
            )));
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut offsets = vec![0usize; n_rows + 1];
        for &(r, _) in &pairs {
            offsets[r + 1] += 1;
        }
        for r in 0..n_rows {
            offsets[r + 1] += offsets[r];
        }
        let indices = pairs.iter().map(|&(_, c)| c).collect();
        let entry_rows = pairs.iter().map(|&(r, _)| r).collect();
        Ok(Self {
            n_rows,
            n_cols,
            offsets,
            indices,
            entry_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Column index of every stored entry.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Row index of every stored entry.
    pub fn entry_rows(&self) -> &[usize] {
        &self.entry_rows
    }

    pub fn row_range(&self, row: usize) -> Range<usize> {
        self.offsets[row]..self.offsets[row + 1]
    }

    pub fn row(&self, row: usize) -> &[usize] {
        &self.indices[self.row_range(row)]
    }

    /// Entry index of `(row, col)`, if stored.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_range(row);
        self.indices[range.clone()]
            .binary_search(&col)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entry_rows.iter().copied().zip(self.indices.iter().copied())
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(r, c)| self.find(c, r).is_some())
    }
}

/// A sparse matrix: a shared [`Csr`] pattern plus one value per entry.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<Csr>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(pattern: Arc<Csr>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::InvalidArgument(format!(
                "sparse matrix has {} values for {} entries",
                values.len(),
                pattern.nnz()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse matrix values".into()));
        }
        Ok(Self { pattern, values })
    }

    pub fn pattern(&self) -> &Arc<Csr> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.pattern.n_rows(), self.pattern.n_cols())
    }

    /// Value at `(row, col)`; zero if the entry is not stored.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.find(row, col).map_or(0.0, |e| self.values[e])
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.shape());
        for (e, (r, c)) in self.pattern.iter().enumerate() {
            out[[r, c]] = self.values[e];
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.pattern.n_rows())
            .map(|r| self.pattern.row_range(r).map(|e| self.values[e]).sum())
            .collect()
    }

    /// Sparse-dense product, accumulated in CSR order.
    pub fn matmul(&self, dense: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let (rows, cols) = self.shape();
        if dense.nrows() != cols {
            return Err(Error::Shape {
                op: "sparse_matmul",
                lhs: (rows, cols),
                rhs: dense.dim(),
            });
        }
        let mut out = Array2::zeros((rows, dense.ncols()));
        for r in 0..rows {
            let mut out_row = out.row_mut(r);
            for e in self.pattern.row_range(r) {
                let w = self.values[e];
                let src = dense.row(self.pattern.indices()[e]);
                out_row.zip_mut_with(&src, |o, &x| *o += w * x);
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.pattern
            .iter()
            .enumerate()
            .all(|(e, (r, c))| (self.values[e] - self.get(c, r)).abs() <= tol)
    }
}

/// An attributed graph with immutable CSR adjacency.
///
/// Row `i` of the adjacency lists the nodes `i` aggregates from, so
/// `Â H` is the aggregation step.
#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: Arc<Csr>,
    augmented: Arc<Csr>,
    self_loop_entries: Vec<usize>,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    directed: bool,
}

impl Graph {
    /// Builds a graph from directed `(src, dst)` pairs, stored as given.
    ///
    /// Node count is the feature row count. Duplicate pairs collapse and
    /// self-loops in the input are dropped: normalization adds exactly one
    /// self-loop per node.
    pub fn new(edges: &[(usize, usize)], features: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        let n = features.nrows();
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Graph(format!("{} labels for {} nodes", labels.len(), n)));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Graph("features contain non-finite values".into()));
        }
        let adjacency = Csr::from_pairs(n, n, edges.iter().copied().filter(|(s, d)| s != d))?;
        let augmented = Csr::from_pairs(n, n, adjacency.iter().chain((0..n).map(|i| (i, i))))?;
        let self_loop_entries = (0..n)
            .map(|i| augmented.find(i, i).expect("self-loop inserted above"))
            .collect();
        let directed = !adjacency.is_symmetric();
        Ok(Self {
            adjacency: Arc::new(adjacency),
            augmented: Arc::new(augmented),
            self_loop_entries,
            features,
            labels,
            directed,
        })
    }

    /// Builds an undirected graph: every pair is stored in both directions.
    pub fn undirected(edges: &[(usize, usize)], features: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        let both: Vec<(usize, usize)> = edges.iter().flat_map(|&(s, d)| [(s, d), (d, s)]).collect();
        Self::new(&both, features, labels)
    }

    /// Builds a graph from feature rows, rejecting ragged input.
    pub fn from_feature_rows(
        edges: &[(usize, usize)],
        rows: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(Error::Graph(format!(
                "ragged features: row {i} has {} columns, expected {width}",
                row.len()
            )));
        }
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((n, width), flat).map_err(|e| Error::Graph(e.to_string()))?;
        Self::new(edges, features, labels)
    }

    /// Same topology with replacement features.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.n_nodes() {
            return Err(Error::Graph(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                self.n_nodes()
            )));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    /// Number of stored directed edges (self-loops excluded).
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn adjacency(&self) -> &Arc<Csr> {
        &self.adjacency
    }

    /// Pattern of `A + I`; all per-entry mask arrays follow this order.
    pub fn augmented(&self) -> &Arc<Csr> {
        &self.augmented
    }

    /// Entry index of each node's self-loop in [`Graph::augmented`].
    pub fn self_loop_entries(&self) -> &[usize] {
        &self.self_loop_entries
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row_range(node).len()
    }

    /// Sorted, deduplicated directed edge list.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency.iter().collect()
    }

    /// `D̃^{-1/2} Ã D̃^{-1/2}` on the augmented pattern.
    pub fn sym_normalized_adjacency(&self) -> SparseMatrix {
        let inv_sqrt: Vec<f64> = (0..self.n_nodes())
            .map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt())
            .collect();
        let values = self.augmented.iter().map(|(r, c)| inv_sqrt[r] * inv_sqrt[c]).collect();
        SparseMatrix {
            pattern: Arc::clone(&self.augmented),
            values,
        }
    }

    /// `Δ̃ = I − D̃^{-1/2} Ã D̃^{-1/2}` on the augmented pattern.
    pub fn normalized_laplacian(&self) -> SparseMatrix {
        let adj = self.sym_normalized_adjacency();
        let values = self
            .augmented
            .iter()
            .zip(adj.values())
            .map(|((r, c), &a)| if r == c { 1.0 - a } else { -a })
            .collect();
        SparseMatrix {
            pattern: Arc::clone(&self.augmented),
            values,
        }
    }
}

/// Uniform points in the unit square, joined when closer than `radius`.
///
/// Node features are the sampled coordinates.
pub fn random_geometric_graph<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidArgument("random geometric graph needs n >= 1".into()));
    }
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(Error::InvalidArgument(format!("radius {radius} outside (0, sqrt(2)]")));
    }
    let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            if (dx * dx + dy * dy).sqrt() < radius {
                edges.push((i, j));
            }
        }
    }
    let features = Array2::from_shape_fn((n, 2), |(i, k)| points[i][k]);
    Graph::undirected(&edges, features, None)
}

/// Off-diagonal Frobenius tolerance used for the dense Laplacian eigensolve.
pub const EIGEN_TOLERANCE: f64 = 1e-10;
/// Sweep cap for the dense Laplacian eigensolve.
pub const EIGEN_MAX_SWEEPS: usize = 100;

/// Unit-norm random combination of the `k` lowest-frequency Laplacian
/// eigenvectors, with standard-normal coefficients.
pub fn low_frequency_signal<R: Rng + ?Sized>(graph: &Graph, k: usize, rng: &mut R) -> Result<Array1<f64>> {
    let n = graph.n_nodes();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n}")));
    }
    let eig = symmetric_eigen(
        &graph.normalized_laplacian().to_dense(),
        EIGEN_TOLERANCE,
        EIGEN_MAX_SWEEPS,
    )?;
    let mut signal = Array1::zeros(n);
    for j in 0..k {
        let coeff: f64 = rng.sample(StandardNormal);
        signal.scaled_add(coeff, &eig.vectors.column(j));
    }
    let norm = signal.dot(&signal).sqrt();
    if norm == 0.0 {
        return Err(Error::NonFinite("low-frequency signal has zero norm".into()));
    }
    Ok(signal / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Graph {
        Graph::undirected(&[(0, 1), (1, 2), (0, 2)], Array2::zeros((3, 1)), None).unwrap()
    }

    #[test]
    fn minimal_graph() {
        let g = Graph::new(&[(0, 1), (1, 0)], Array2::zeros((2, 1)), None).unwrap();
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.n_edges(), 2);
        assert!(!g.is_directed());
    }

    #[test]
    fn edgeless_graph_has_zero_offsets() {
        let g = Graph::new(&[], Array2::zeros((3, 2)), None).unwrap();
        assert_eq!(g.adjacency().offsets(), &[0, 0, 0, 0]);
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = Graph::new(&[(0, 1), (0, 1)], Array2::zeros((2, 1)), None).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
        assert!(g.is_directed());
    }

    #[test]
    fn out_of_range_and_ragged_inputs_fail() {
        assert!(Graph::new(&[(0, 5)], Array2::zeros((2, 1)), None).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(Graph::from_feature_rows(&[], ragged, None).is_err());
        assert!(Graph::new(&[], Array2::zeros((2, 1)), Some(vec![0])).is_err());
    }

    #[test]
    fn triangle_normalized_adjacency_is_one_third() {
        let a = triangle().sym_normalized_adjacency().to_dense();
        for v in a.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let l = triangle().normalized_laplacian().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
                assert_abs_diff_eq!(l[[i, j]], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn isolated_node_operators() {
        let g = Graph::new(&[], Array2::zeros((1, 1)), None).unwrap();
        assert_eq!(g.sym_normalized_adjacency().to_dense(), array![[1.0]]);
        assert_eq!(g.normalized_laplacian().to_dense(), array![[0.0]]);
    }

    #[test]
    fn path_graph_entry() {
        let g = Graph::undirected(&[(0, 1), (1, 2)], Array2::zeros((3, 1)), None).unwrap();
        let a = g.sym_normalized_adjacency();
        assert_abs_diff_eq!(a.get(0, 1), 1.0 / 6f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.get(0, 1), 0.408_248_290_463_863, epsilon = 1e-12);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn laplacian_nullspace_is_sqrt_degree() {
        let g = Graph::undirected(&[(0, 1), (1, 2), (1, 3)], Array2::zeros((4, 1)), None).unwrap();
        let l = g.normalized_laplacian();
        let v = Array2::from_shape_fn((4, 1), |(i, _)| ((g.degree(i) + 1) as f64).sqrt());
        let lv = l.matmul(&v.view()).unwrap();
        for x in lv.iter() {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn geometric_graph_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_geometric_graph(200, 0.125, &mut rng).unwrap();
        assert_eq!(g.n_nodes(), 200);
        assert!(!g.is_directed());

        let again = random_geometric_graph(200, 0.125, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(g.edges(), again.edges());

        let eps = 1e-9;
        assert!(random_geometric_graph(10, std::f64::consts::SQRT_2 + eps, &mut rng).is_err());
        assert!(random_geometric_graph(10, 0.0, &mut rng).is_err());
        let dense = random_geometric_graph(30, std::f64::consts::SQRT_2 - eps, &mut rng).unwrap();
        assert_eq!(dense.n_edges(), 30 * 29);
    }

    #[test]
    fn signal_with_one_eigenvector_is_nullspace() {
        let g = Graph::undirected(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], Array2::zeros((4, 1)), None).unwrap();
        let s = low_frequency_signal(&g, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut expected: Array1<f64> = (0..4).map(|i| ((g.degree(i) + 1) as f64).sqrt()).collect();
        expected /= expected.dot(&expected).sqrt();
        let sign = s.dot(&expected).signum();
        for i in 0..4 {
            assert_abs_diff_eq!(s[i], sign * expected[i], epsilon = 1e-9);
        }
        assert!(low_frequency_signal(&g, 5, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
