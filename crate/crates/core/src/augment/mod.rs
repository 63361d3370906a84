//! Clean-label graph augmentation: a GCN encoder, a ReLU-cosine decoder,
//! the negative-sampled reconstruction loss and the augmented adjacency.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{self, ForwardCache, GcnParams, NodeFeatures};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::numerics::{axpy, DenseMatrix, SeededRng, SparseMatrix};

const NORM_EPS: f64 = 1e-12;

/// Encoder weights; a GCN whose output layer is the embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePredictor {
    pub encoder: GcnParams,
}

impl EdgePredictor {
    pub fn init(input_dim: usize, hidden: usize, embed: usize, seed: u64) -> Self {
        Self {
            encoder: GcnParams::init(input_dim, hidden, embed, seed),
        }
    }
}

/// Embeddings `Z` (the encoder's linear output) plus the cache for backprop.
pub fn encode(adj: &NormalizedAdjacency, x: &NodeFeatures, p: &EdgePredictor) -> Result<ForwardCache> {
    gcn::forward(adj, x, &p.encoder)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Four interleaved partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `max(0, cos(z_i, z_j))`, or 0 if either vector is (numerically) zero.
pub fn edge_weight(zi: &[f64], zj: &[f64]) -> f64 {
    let (ni, nj) = (norm(zi), norm(zj));
    if ni < NORM_EPS || nj < NORM_EPS {
        return 0.0;
    }
    (dot(zi, zj) / (ni * nj)).clamp(0.0, 1.0)
}

/// Sampled non-neighbors per node, drawn uniformly with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSamples {
    pub per_node: Vec<Vec<usize>>,
}

impl NegativeSamples {
    /// Nodes adjacent to every other node get no samples.
    pub fn draw(g: &Graph, n_neg: usize, rng: &mut SeededRng) -> Self {
        let n = g.num_nodes();
        let per_node = (0..n)
            .map(|i| {
                if n_neg == 0 || g.degree(i) + 1 >= n {
                    return Vec::new();
                }
                let mut out = Vec::with_capacity(n_neg);
                while out.len() < n_neg {
                    let j = rng.below(n);
                    if j != i && !g.has_edge(i, j) {
                        out.push(j);
                    }
                }
                out
            })
            .collect();
        Self { per_node }
    }
}

/// `Σ_i [Σ_{j∈N(i)} (w_ij - 1)² + n_neg · mean_n w_in²]` and its gradient
/// with respect to `Z`.
pub fn reconstruction_loss(
    z: &DenseMatrix,
    g: &Graph,
    negatives: &NegativeSamples,
    n_neg: usize,
) -> Result<(f64, DenseMatrix)> {
    if z.rows() != g.num_nodes() || negatives.per_node.len() != g.num_nodes() {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("Z has {} rows, graph {} nodes", z.rows(), g.num_nodes()),
        ));
    }
    let norms: Vec<f64> = z.row_iter().map(norm).collect();
    let mut grad = DenseMatrix::zeros(z.rows(), z.cols());
    let mut loss = 0.0;
    // One pair term `coef · (w_ij - target)²`; i != j always holds here.
    let mut add_term = |i: usize, j: usize, target: f64, coef: f64| -> f64 {
        let (ni, nj) = (norms[i], norms[j]);
        if ni < NORM_EPS || nj < NORM_EPS {
            return coef * target * target;
        }
        let (zi, zj) = (z.row(i), z.row(j));
        let cos = dot(zi, zj) / (ni * nj);
        let r = cos.clamp(0.0, 1.0) - target;
        if cos > 0.0 {
            let c = 2.0 * coef * r;
            let cross = c / (ni * nj);
            let (si, sj) = (c * cos / (ni * ni), c * cos / (nj * nj));
            let gi = grad.row_mut(i);
            for k in 0..zi.len() {
                gi[k] += cross * zj[k] - si * zi[k];
            }
            let gj = grad.row_mut(j);
            for k in 0..zj.len() {
                gj[k] += cross * zi[k] - sj * zj[k];
            }
        }
        coef * r * r
    };
    for i in 0..g.num_nodes() {
        for &j in g.neighbors(i) {
            loss += add_term(i, j, 1.0, 1.0);
        }
        let negs = &negatives.per_node[i];
        if !negs.is_empty() {
            let coef = n_neg as f64 / negs.len() as f64;
            for &j in negs {
                loss += add_term(i, j, 0.0, coef);
            }
        }
    }
    Ok((loss, grad))
}

/// An added edge `unlabeled → clean` with its decoder weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddedEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// The augmented adjacency `Â`: original edges at weight 1 plus added edges.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedGraph {
    /// Symmetric weights of `Â` (no self-loops).
    pub weights: SparseMatrix,
    pub added: Vec<AddedEdge>,
}

impl AugmentedGraph {
    /// `Â = A`.
    pub fn unchanged(g: &Graph) -> Self {
        Self {
            weights: g.adjacency().clone(),
            added: Vec::new(),
        }
    }

    /// Rebuilds `Â` from a list of added edges, e.g. one read from a checkpoint.
    pub fn from_added(g: &Graph, added: Vec<AddedEdge>) -> Result<Self> {
        let n = g.num_nodes();
        let mut triplets: Vec<(usize, usize, f64)> = g.adjacency().iter().collect();
        for e in &added {
            if e.src >= n || e.dst >= n || e.src == e.dst {
                return Err(Error::invalid(format!("added edge ({}, {}) invalid", e.src, e.dst)));
            }
            if g.has_edge(e.src, e.dst) {
                return Err(Error::invalid(format!("added edge ({}, {}) already in A", e.src, e.dst)));
            }
            triplets.push((e.src, e.dst, e.weight));
            triplets.push((e.dst, e.src, e.weight));
        }
        let weights = SparseMatrix::from_triplets(n, n, triplets)?;
        Ok(Self { weights, added })
    }

    /// `D^{-1/2}(Â + I)D^{-1/2}` with weighted degrees.
    pub fn normalized(&self, g: &Graph) -> Result<NormalizedAdjacency> {
        if self.added.is_empty() {
            return normalize_adjacency(g, None);
        }
        NormalizedAdjacency::from_weighted(&self.weights)
    }
}

/// Links each unlabeled node to the clean nodes whose decoder weight exceeds
/// `tau`, keeping at most `top_k` per unlabeled node when set.
pub fn augment(
    g: &Graph,
    z: &DenseMatrix,
    clean: &[usize],
    unlabeled: &[usize],
    tau: f64,
    top_k: Option<usize>,
) -> Result<AugmentedGraph> {
    if z.rows() != g.num_nodes() {
        return Err(Error::shape("augment", format!("Z has {} rows, graph {} nodes", z.rows(), g.num_nodes())));
    }
    if clean.is_empty() || unlabeled.is_empty() || top_k == Some(0) {
        return Ok(AugmentedGraph::unchanged(g));
    }
    let mut targets = clean.to_vec();
    targets.sort_unstable();
    targets.dedup();
    // Unit target embeddings stored coordinate-major, so one source row is
    // scored against every target with `dim` axpys.
    let dim = z.cols();
    let mut valid = vec![true; targets.len()];
    let mut coords = DenseMatrix::zeros(dim, targets.len());
    for (c, &j) in targets.iter().enumerate() {
        let r = z.row(j);
        let nr = norm(r);
        if nr < NORM_EPS {
            valid[c] = false;
            continue;
        }
        for (k, &v) in r.iter().enumerate() {
            coords.set(k, c, v / nr);
        }
    }
    let per_source: Vec<Vec<AddedEdge>> = unlabeled
        .par_iter()
        .map(|&i| {
            let zi = z.row(i);
            let ni = norm(zi);
            if ni < NORM_EPS {
                return Vec::new();
            }
            let mut scores = vec![0.0; targets.len()];
            for (k, &v) in zi.iter().enumerate() {
                axpy(v / ni, coords.row(k), &mut scores);
            }
            let nbrs = g.neighbors(i);
            let mut p = 0;
            let mut kept = Vec::new();
            for (c, &j) in targets.iter().enumerate() {
                while p < nbrs.len() && nbrs[p] < j {
                    p += 1;
                }
                if j == i || !valid[c] || nbrs.get(p) == Some(&j) {
                    continue;
                }
                let w = scores[c].clamp(0.0, 1.0);
                if w > tau {
                    kept.push(AddedEdge { src: i, dst: j, weight: w });
                }
            }
            if let Some(k) = top_k {
                // Weight descending, ties to the lower target: a total order,
                // so selection is deterministic.
                if kept.len() > k {
                    kept.select_nth_unstable_by(k, |a, b| {
                        b.weight.partial_cmp(&a.weight).unwrap_or(Ordering::Equal).then(a.dst.cmp(&b.dst))
                    });
                    kept.truncate(k);
                }
                kept.sort_by_key(|e| e.dst);
            }
            kept
        })
        .collect();
    AugmentedGraph::from_added(g, per_source.into_iter().flatten().collect())
}

/// Counts of violated augmentation invariants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentViolations {
    /// Original edges missing from `Â` or not at weight 1.
    pub original_edges: usize,
    /// Added edges whose target is outside `V_cl`.
    pub targets_not_clean: usize,
    /// Added edges with weight outside `(τ, 1]`.
    pub weight_out_of_range: usize,
    /// Added edges that duplicate an original edge.
    pub overlaps_original: usize,
    pub asymmetric: usize,
}

impl AugmentViolations {
    pub fn total(&self) -> usize {
        self.original_edges + self.targets_not_clean + self.weight_out_of_range + self.overlaps_original + self.asymmetric
    }
}

pub fn check_augmentation(g: &Graph, aug: &AugmentedGraph, clean: &[usize], tau: f64) -> AugmentViolations {
    let mut v = AugmentViolations::default();
    let mut is_clean = vec![false; g.num_nodes()];
    clean.iter().for_each(|&j| is_clean[j] = true);
    for (i, j, _) in g.adjacency().iter() {
        if aug.weights.get(i, j) != 1.0 {
            v.original_edges += 1;
        }
    }
    for e in &aug.added {
        if !is_clean[e.dst] {
            v.targets_not_clean += 1;
        }
        if !(e.weight > tau && e.weight <= 1.0) {
            v.weight_out_of_range += 1;
        }
        if g.has_edge(e.src, e.dst) {
            v.overlaps_original += 1;
        }
    }
    if !aug.weights.is_symmetric() {
        v.asymmetric += 1;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff, relative_error};

    fn path3() -> Graph {
        Graph::new(2, [(0, 1), (1, 2)], DenseMatrix::zeros(3, 1), vec![0, 1, 0]).unwrap()
    }

    #[test]
    fn decoder_cases() {
        assert!((edge_weight(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(edge_weight(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(edge_weight(&[1.0, -2.0], &[-1.0, 2.0]), 0.0);
        assert_eq!(edge_weight(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn zero_embeddings_cost_two_per_edge() {
        let g = path3();
        let mut rng = SeededRng::new(1);
        let negs = NegativeSamples::draw(&g, 5, &mut rng);
        let (loss, grad) = reconstruction_loss(&DenseMatrix::zeros(3, 4), &g, &negs, 5).unwrap();
        assert_eq!(loss, 4.0);
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_reconstruction_and_negative_scaling() {
        // Path 0-1-2: nodes 0 and 1 share a direction, 2 aligns with 1 too,
        // so edges reconstruct exactly; the only non-edge (0,2) also scores 1.
        let g = path3();
        let z = DenseMatrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]]).unwrap();
        let none = NegativeSamples { per_node: vec![vec![]; 3] };
        assert_eq!(reconstruction_loss(&z, &g, &none, 3).unwrap().0, 0.0);
        let negs = NegativeSamples { per_node: vec![vec![2, 2], vec![], vec![0]] };
        let l1 = reconstruction_loss(&z, &g, &negs, 1).unwrap().0;
        let l2 = reconstruction_loss(&z, &g, &negs, 2).unwrap().0;
        assert!((l1 - 2.0).abs() < 1e-12);
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn negatives_are_non_neighbors() {
        let g = Graph::new(1, [(0, 1), (0, 2), (1, 2), (2, 3)], DenseMatrix::zeros(5, 1), vec![0; 5]).unwrap();
        let mut rng = SeededRng::new(3);
        let negs = NegativeSamples::draw(&g, 20, &mut rng);
        for (i, list) in negs.per_node.iter().enumerate() {
            assert_eq!(list.len(), 20);
            assert!(list.iter().all(|&j| j != i && !g.has_edge(i, j)));
        }
        let full = Graph::new(1, [(0, 1)], DenseMatrix::zeros(2, 1), vec![0; 2]).unwrap();
        assert!(NegativeSamples::draw(&full, 5, &mut rng).per_node.iter().all(Vec::is_empty));
    }

    #[test]
    fn reconstruction_gradient_matches_finite_differences() {
        let g = Graph::new(1, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)], DenseMatrix::zeros(6, 1), vec![0; 6]).unwrap();
        for seed in 0..5 {
            let mut rng = SeededRng::new(seed);
            let z = DenseMatrix::from_fn(6, 3, |_, _| rng.gaussian());
            let negs = NegativeSamples::draw(&g, 4, &mut rng);
            let (_, grad) = reconstruction_loss(&z, &g, &negs, 4).unwrap();
            let numeric = finite_diff(
                |flat| reconstruction_loss(&DenseMatrix::from_vec(6, 3, flat.to_vec()).unwrap(), &g, &negs, 4).unwrap().0,
                z.as_slice(),
                1e-5,
            );
            assert!(relative_error(grad.as_slice(), &numeric) < 1e-4, "seed {seed}");
        }
    }

    fn four_nodes() -> Graph {
        Graph::new(2, [(0, 1), (1, 2)], DenseMatrix::zeros(4, 1), vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn hand_augmentation() {
        let g = four_nodes();
        // cos(z0, z3) = 0.8.
        let z = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.8, 0.6]]).unwrap();
        let aug = augment(&g, &z, &[3], &[0], 0.1, None).unwrap();
        assert_eq!(aug.added.len(), 1);
        let e = aug.added[0];
        assert_eq!((e.src, e.dst), (0, 3));
        assert!((e.weight - 0.8).abs() < 1e-12);
        assert!((aug.weights.get(3, 0) - 0.8).abs() < 1e-12);
        assert_eq!(check_augmentation(&g, &aug, &[3], 0.1).total(), 0);
    }

    #[test]
    fn no_additions_cases() {
        let g = four_nodes();
        let z = DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let same = AugmentedGraph::unchanged(&g);
        assert_eq!(augment(&g, &z, &[3], &[0], 1.0, None).unwrap(), same);
        assert_eq!(augment(&g, &z, &[], &[0], 0.1, None).unwrap(), same);
        assert_eq!(augment(&g, &z, &[3], &[0], 0.1, Some(0)).unwrap(), same);
        // Existing edges are never re-added.
        assert!(augment(&g, &z, &[1], &[0], 0.1, None).unwrap().added.is_empty());
    }

    #[test]
    fn top_k_keeps_highest() {
        let g = Graph::new(2, [], DenseMatrix::zeros(4, 1), vec![0; 4]).unwrap();
        let z = DenseMatrix::from_rows(&[[1.0, 0.0], [0.9, 0.1], [0.5, 0.5], [0.99, 0.01]]).unwrap();
        let aug = augment(&g, &z, &[1, 2, 3], &[0], 0.1, Some(2)).unwrap();
        let dsts: Vec<usize> = aug.added.iter().map(|e| e.dst).collect();
        assert_eq!(dsts, vec![1, 3]);
    }

    #[test]
    fn normalization_with_added_edges() {
        let g = four_nodes();
        let aug = AugmentedGraph::from_added(&g, vec![AddedEdge { src: 0, dst: 3, weight: 0.5 }]).unwrap();
        let a = aug.normalized(&g).unwrap();
        // Weighted degrees of Â + I: node 0 → 2.5, node 3 → 1.5.
        assert!((a.matrix().get(0, 3) - 0.5 / (2.5f64 * 1.5).sqrt()).abs() < 1e-15);
        assert!(AugmentedGraph::from_added(&g, vec![AddedEdge { src: 0, dst: 1, weight: 0.5 }]).is_err());
    }
}
