#![allow(dead_code)]

use cfgd::graph::Graph;
use cfgd::numerics::{row_softmax, DenseMatrix, SeededRng};

/// Erdős–Rényi graph with Gaussian features and uniform labels.
pub fn random_graph(n: usize, d: usize, c: usize, p_edge: f64, seed: u64) -> Graph {
    let mut rng = SeededRng::new(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(p_edge) {
                edges.push((i, j));
            }
        }
    }
    let features = DenseMatrix::from_fn(n, d, |_, _| rng.gaussian());
    let labels = (0..n).map(|_| rng.below(c)).collect();
    Graph::new(c, edges, features, labels).unwrap()
}

/// Row-stochastic matrix from softmaxed Gaussian logits of scale `temp`.
pub fn random_probs(n: usize, c: usize, temp: f64, rng: &mut SeededRng) -> DenseMatrix {
    row_softmax(&DenseMatrix::from_fn(n, c, |_, _| temp * rng.gaussian()))
}

/// Relabels node `i` as `perm[i]`.
pub fn permute_graph(g: &Graph, perm: &[usize]) -> Graph {
    let n = g.num_nodes();
    let mut features = DenseMatrix::zeros(n, g.feature_dim());
    let mut labels = vec![0; n];
    for i in 0..n {
        features.row_mut(perm[i]).copy_from_slice(g.features().row(i));
        labels[perm[i]] = g.labels()[i];
    }
    let edges: Vec<(usize, usize)> = g.edges().map(|(a, b)| (perm[a], perm[b])).collect();
    Graph::new(g.num_classes(), edges, features, labels).unwrap()
}
