//! Graph representation, normalized Laplacian and its spectrum, kNN graph
//! construction, and homophily diagnostics.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Excursions of Laplacian eigenvalues outside `[0, 2]` up to this size are
/// treated as round-off and clamped.
pub const EIGEN_CLAMP_TOL: f64 = 1e-8;

/// Inputs to [`spectral_decompose`] must be symmetric to this tolerance.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Undirected weighted graph with a dense adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: DMatrix<f64>,
    degrees: DVector<f64>,
}

impl Graph {
    /// Builds a graph from a symmetric, nonnegative adjacency matrix.
    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 || adjacency.ncols() != n {
            return Err(Error::Parameter(format!(
                "adjacency must be a non-empty square matrix, got {}x{}",
                n,
                adjacency.ncols()
            )));
        }
        if let Some(bad) = adjacency.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Parameter(format!("adjacency weight {bad} is not a finite nonnegative number")));
        }
        let violation = linalg::asymmetry(&adjacency);
        if violation > 0.0 {
            return Err(Error::Symmetry { violation });
        }
        let degrees = DVector::from_iterator(n, adjacency.row_iter().map(|r| r.sum()));
        Ok(Graph { adjacency, degrees })
    }

    /// Builds an undirected graph from `(src, dst, weight)` triples; both
    /// orientations are set.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Parameter(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        Graph::from_adjacency(a)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    /// Unordered edges `(i, j, w)` with `i < j` and `w > 0`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| {
            ((i + 1)..n).filter_map(move |j| {
                let w = self.adjacency[(i, j)];
                (w > 0.0).then_some((i, j, w))
            })
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Breadth-first reachability from node 0 covers every node.
    pub fn is_connected(&self) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            for (j, s) in seen.iter_mut().enumerate() {
                if !*s && self.adjacency[(i, j)] > 0.0 {
                    *s = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        reached == n
    }
}

/// `D^{-1/2} (D - A) D^{-1/2}`.
///
/// Isolated nodes use `d^{-1/2} := 0`, so their rows and columns are zero.
pub fn normalized_laplacian(g: &Graph) -> DMatrix<f64> {
    let n = g.n();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let a = g.adjacency();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        l[(j, j)] = inv_sqrt[j] * (g.degrees()[j] - a[(j, j)]) * inv_sqrt[j];
        for i in (j + 1)..n {
            // one product per pair keeps L exactly symmetric
            let v = -(a[(i, j)] * (inv_sqrt[i] * inv_sqrt[j]));
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    l
}

/// Eigenpairs `L = U diag(Λ) Uᵀ`, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn compose(&self, spectrum: &DVector<f64>) -> DMatrix<f64> {
        linalg::spectral_compose(&self.eigenvectors, spectrum)
    }

    /// `U diag(Λ) Uᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.compose(&self.eigenvalues)
    }
}

/// Eigendecomposition of a symmetric (Laplacian) matrix.
///
/// Eigenvalues within [`EIGEN_CLAMP_TOL`] outside `[0, 2]` are clamped into
/// the interval; larger excursions are returned as computed.
pub fn spectral_decompose(l: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if l.nrows() != l.ncols() || l.nrows() == 0 {
        return Err(Error::Parameter("spectral_decompose needs a non-empty square matrix".into()));
    }
    let violation = linalg::asymmetry(l);
    if violation > SYMMETRY_TOL {
        return Err(Error::Symmetry { violation });
    }
    let (mut eigenvalues, eigenvectors) = linalg::symmetric_eigen(l)?;
    for v in eigenvalues.iter_mut() {
        if *v < 0.0 && *v >= -EIGEN_CLAMP_TOL {
            *v = 0.0;
        } else if *v > 2.0 && *v <= 2.0 + EIGEN_CLAMP_TOL {
            *v = 2.0;
        }
    }
    Ok(SpectralDecomposition {
        eigenvectors,
        eigenvalues,
    })
}

/// Unweighted k-nearest-neighbour graph over the rows of `x`.
///
/// Edge `(i, j)` exists iff `j` is among the `k` nearest Euclidean neighbours
/// of `i` or vice versa. Distance ties go to the lower node index.
pub fn build_knn_graph(x: &DMatrix<f64>, k: usize) -> Result<Graph> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::Parameter("k must be positive".into()));
    }
    if k >= n {
        return Err(Error::Parameter(format!("k = {k} must be smaller than the node count {n}")));
    }
    let sq = pairwise_sq_distances(x);
    let mut a = DMatrix::zeros(n, n);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i).map(|j| (sq[(i, j)], j)));
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, by_distance);
        }
        for &(_, j) in &candidates[..k] {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
    }
    Graph::from_adjacency(a)
}

/// Squared Euclidean distances between the rows of `x`.
pub fn pairwise_sq_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    cross_sq_distances(x, x)
}

/// Squared Euclidean distances between rows of `a` and rows of `b`.
pub fn cross_sq_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.ncols(), b.ncols());
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        a.row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum()
    })
}

/// Fraction of edges whose endpoints carry the same label.
///
/// Counts unordered node pairs with positive weight; self-loops are not edges
/// between distinct nodes and are ignored.
pub fn homophily_ratio(g: &Graph, labels: &[usize]) -> Result<f64> {
    if labels.len() != g.n() {
        return Err(Error::Parameter(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.n()
        )));
    }
    let (mut same, mut total) = (0usize, 0usize);
    for (i, j, _) in g.edges() {
        total += 1;
        if labels[i] == labels[j] {
            same += 1;
        }
    }
    if total == 0 {
        return Err(Error::EdgelessGraph);
    }
    Ok(same as f64 / total as f64)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize_adjacency(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Parameter("adjacency must be square".into()));
    }
    Ok((a + a.transpose()) * 0.5)
}
