//! Graph data model, adjacency normalization and split generation.

mod io;
mod split;

pub use io::{load_graph, save_graph, GraphManifest};
pub use split::{make_split, SplitMasks};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseMatrix};

/// Undirected, unweighted graph with dense node features and ground-truth labels.
///
/// The adjacency is stored as a symmetric binary CSR matrix without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_classes: usize,
    adjacency: SparseMatrix,
    features: DenseMatrix,
    labels: Vec<usize>,
}

impl Graph {
    /// Symmetrizes and deduplicates `edges` and drops self-loops.
    pub fn new(
        num_classes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: DenseMatrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "node {i} has label {y}, expected < {num_classes}"
            )));
        }
        let mut triplets = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) references a node >= {n}"
                )));
            }
            if a != b {
                triplets.push((a, b, 1.0));
                triplets.push((b, a, 1.0));
            }
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        triplets.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);
        let adjacency = SparseMatrix::from_triplets(n, n, triplets)?;
        Ok(Self {
            num_classes,
            adjacency,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adjacency.row(i).0
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.row_nnz(i)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.contains(i, j)
    }

    /// Undirected edges `(src, dst)` with `src < dst`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .filter(|&(i, j, _)| i < j)
            .map(|(i, j, _)| (i, j))
    }

    /// Copy of the graph with each feature row scaled to unit L1 norm
    /// (all-zero rows are left as is).
    pub fn with_row_normalized_features(&self) -> Graph {
        let mut features = self.features.clone();
        for i in 0..features.rows() {
            let row = features.row_mut(i);
            let total: f64 = row.iter().map(|v| v.abs()).sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        Graph {
            features,
            ..self.clone()
        }
    }
}

/// Symmetrically normalized propagation matrix `D^{-1/2}(W + I)D^{-1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: SparseMatrix,
    self_loops_added: bool,
}

impl NormalizedAdjacency {
    /// Normalizes a symmetric non-negative weight matrix without stored self-loops.
    /// Degrees are weighted row sums of `W + I`.
    pub fn from_weighted(weights: &SparseMatrix) -> Result<Self> {
        let n = weights.rows();
        if weights.cols() != n {
            return Err(Error::shape("normalize_adjacency", "weight matrix not square"));
        }
        let mut triplets = Vec::with_capacity(weights.nnz() + n);
        for (i, j, w) in weights.iter() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::NonFinite(format!("edge weight ({i}, {j}) = {w}")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("stored self-loop at {i}")));
            }
            if w > 0.0 {
                triplets.push((i, j, w));
            }
        }
        triplets.extend((0..n).map(|i| (i, i, 1.0)));
        let with_loops = SparseMatrix::from_triplets(n, n, triplets)?;
        let inv_sqrt: Vec<f64> = with_loops
            .row_sums()
            .into_iter()
            .map(|d| 1.0 / d.sqrt())
            .collect();
        let values: Vec<f64> = with_loops
            .iter()
            // The scale product commutes exactly, so the result stays symmetric.
            .map(|(i, j, w)| w * (inv_sqrt[i] * inv_sqrt[j]))
            .collect();
        let matrix = SparseMatrix::from_csr(
            n,
            n,
            with_loops.indptr().to_vec(),
            with_loops.indices().to_vec(),
            values,
        )?;
        Ok(Self {
            matrix,
            self_loops_added: true,
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn self_loops_added(&self) -> bool {
        self.self_loops_added
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.rows()
    }
}

/// Normalizes the graph's adjacency, optionally merged with extra weighted
/// edges. Overlay entries on existing edges are ignored (existing edges keep
/// weight 1); zero-weight overlay entries contribute nothing.
pub fn normalize_adjacency(
    g: &Graph,
    weighted_overlay: Option<&SparseMatrix>,
) -> Result<NormalizedAdjacency> {
    match weighted_overlay {
        None => NormalizedAdjacency::from_weighted(g.adjacency()),
        Some(overlay) => {
            if overlay.rows() != g.num_nodes() || overlay.cols() != g.num_nodes() {
                return Err(Error::shape(
                    "normalize_adjacency",
                    "overlay size differs from graph",
                ));
            }
            let mut triplets: Vec<(usize, usize, f64)> = g.adjacency().iter().collect();
            for (i, j, w) in overlay.iter() {
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::NonFinite(format!("overlay weight ({i}, {j}) = {w}")));
                }
                if i != j && w > 0.0 && !g.has_edge(i, j) {
                    triplets.push((i, j, w));
                }
            }
            let merged = SparseMatrix::from_triplets(g.num_nodes(), g.num_nodes(), triplets)?;
            if !merged.is_symmetric() {
                return Err(Error::InvalidGraph("overlay is not symmetric".into()));
            }
            NormalizedAdjacency::from_weighted(&merged)
        }
    }
}

/// Row-normalized `W + I`: entry `(i, j)` is `w_ij / Σ_k w_ik` with a unit self-loop.
pub fn row_normalized_with_self_loops(weights: &SparseMatrix) -> Result<SparseMatrix> {
    let n = weights.rows();
    let mut triplets: Vec<(usize, usize, f64)> =
        weights.iter().filter(|&(i, j, _)| i != j).collect();
    triplets.extend((0..n).map(|i| (i, i, 1.0)));
    let m = SparseMatrix::from_triplets(n, n, triplets)?;
    let sums = m.row_sums();
    let values = m.iter().map(|(i, _, w)| w / sums[i]).collect();
    SparseMatrix::from_csr(n, n, m.indptr().to_vec(), m.indices().to_vec(), values)
}
