//! Two-layer GCN: forward pass, hand-derived backward pass, peer pair and warm-up.

mod checkpoint;
mod warmup;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use warmup::{ce_step, cross_entropy_grad, warmup, PeerOptimizers, WarmupRecord};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::numerics::{row_softmax, AdamConfig, AdamState, DenseMatrix, ParamGrad, SeededRng, SparseMatrix};

/// Node features kept in CSR form (and transposed) for the first-layer products.
#[derive(Clone, Debug)]
pub struct NodeFeatures {
    csr: SparseMatrix,
    csr_t: SparseMatrix,
}

impl NodeFeatures {
    pub fn new(x: &DenseMatrix) -> Self {
        let csr = SparseMatrix::from_dense(x);
        let csr_t = csr.transpose();
        Self { csr, csr_t }
    }

    pub fn num_nodes(&self) -> usize {
        self.csr.rows()
    }

    pub fn dim(&self) -> usize {
        self.csr.cols()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.csr
    }
}

impl From<&DenseMatrix> for NodeFeatures {
    fn from(x: &DenseMatrix) -> Self {
        NodeFeatures::new(x)
    }
}

/// Weights and biases of `logits = Ã·ReLU(Ã·X·W1 + b1)·W2 + b2`.
///
/// The same struct carries gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl GcnParams {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(input_dim: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let bound = glorot_bound(rows, cols);
            DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound))
        };
        let w1 = glorot(input_dim, hidden);
        let w2 = glorot(hidden, output);
        Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; output],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: DenseMatrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: DenseMatrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn tensor_sizes(&self) -> [usize; 4] {
        [self.w1.as_slice().len(), self.b1.len(), self.w2.as_slice().len(), self.b2.len()]
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }

    /// All parameters concatenated in `w1, b1, w2, b2` order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Inverse of [`flatten`](Self::flatten) for a parameter set of the same shape.
    pub fn unflatten_like(&self, flat: &[f64]) -> Result<Self> {
        let total: usize = self.tensor_sizes().iter().sum();
        if flat.len() != total {
            return Err(Error::shape("GcnParams::unflatten_like", format!("{} vs {total}", flat.len())));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for t in out.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn adam_state(&self, config: AdamConfig) -> AdamState {
        AdamState::new(config, &self.tensor_sizes())
    }

    /// One optimizer step with `grads`; `prefix` names tensors in error messages.
    pub fn apply_adam(&mut self, state: &mut AdamState, grads: &GcnParams, prefix: &str) -> Result<()> {
        let names: Vec<String> = TENSOR_NAMES.iter().map(|t| format!("{prefix}.{t}")).collect();
        let grad_tensors = grads.tensors();
        let mut slots: Vec<ParamGrad<'_>> = self
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(&names)
            .map(|((param, grad), name)| ParamGrad { name, param, grad })
            .collect();
        state.step(&mut slots)
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `X·W1`; independent of the adjacency, so it can be reused across graphs.
    pub projected: DenseMatrix,
    /// `Ã·X·W1 + b1`.
    pub pre_hidden: DenseMatrix,
    /// `ReLU(pre_hidden)`.
    pub hidden: DenseMatrix,
    pub logits: DenseMatrix,
    /// Row-softmax of the logits.
    pub probs: DenseMatrix,
}

fn check_shapes(adj: &NormalizedAdjacency, x: &NodeFeatures, p: &GcnParams) -> Result<()> {
    if adj.num_nodes() != x.num_nodes() {
        return Err(Error::shape(
            "gcn forward",
            format!("adjacency on {} nodes, features on {}", adj.num_nodes(), x.num_nodes()),
        ));
    }
    if x.dim() != p.input_dim() {
        return Err(Error::shape(
            "gcn forward",
            format!("feature dim {} but W1 has {} rows", x.dim(), p.input_dim()),
        ));
    }
    Ok(())
}

/// `X·W1`.
pub fn project(x: &NodeFeatures, p: &GcnParams) -> Result<DenseMatrix> {
    x.matrix().spmm(&p.w1)
}

pub fn forward(adj: &NormalizedAdjacency, x: &NodeFeatures, p: &GcnParams) -> Result<ForwardCache> {
    check_shapes(adj, x, p)?;
    forward_projected(adj, project(x, p)?, p)
}

/// Forward pass from a precomputed `X·W1`.
pub fn forward_projected(adj: &NormalizedAdjacency, projected: DenseMatrix, p: &GcnParams) -> Result<ForwardCache> {
    let a = adj.matrix();
    let mut pre_hidden = a.spmm(&projected)?;
    pre_hidden.add_row_vector(&p.b1)?;
    let hidden = pre_hidden.map(|v| v.max(0.0));
    let mut logits = a.spmm(&hidden.matmul(&p.w2)?)?;
    logits.add_row_vector(&p.b2)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite("gcn logits".into()));
    }
    let probs = row_softmax(&logits);
    Ok(ForwardCache {
        projected,
        pre_hidden,
        hidden,
        logits,
        probs,
    })
}

/// Parameter gradients for an upstream gradient on the logits.
///
/// `Ã` is symmetric, so every transposed propagation reuses `spmm`.
pub fn backward(
    cache: &ForwardCache,
    adj: &NormalizedAdjacency,
    x: &NodeFeatures,
    p: &GcnParams,
    grad_logits: &DenseMatrix,
) -> Result<GcnParams> {
    if grad_logits.shape() != cache.logits.shape() {
        return Err(Error::shape(
            "gcn backward",
            format!("upstream {:?}, logits {:?}", grad_logits.shape(), cache.logits.shape()),
        ));
    }
    let a = adj.matrix();
    let b2 = grad_logits.column_sums();
    let propagated = a.spmm(grad_logits)?;
    let w2 = cache.hidden.transpose().matmul(&propagated)?;
    let mut d_hidden = propagated.matmul(&p.w2.transpose())?;
    for (g, &pre) in d_hidden.as_mut_slice().iter_mut().zip(cache.pre_hidden.as_slice()) {
        if pre <= 0.0 {
            *g = 0.0;
        }
    }
    let b1 = d_hidden.column_sums();
    let w1 = x.csr_t.spmm(&a.spmm(&d_hidden)?)?;
    Ok(GcnParams { w1, b1, w2, b2 })
}

/// Two independently initialized GCNs of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PeerModel {
    pub gcn1: GcnParams,
    pub gcn2: GcnParams,
}

impl PeerModel {
    pub fn init(input_dim: usize, hidden: usize, classes: usize, seed1: u64, seed2: u64) -> Self {
        Self {
            gcn1: GcnParams::init(input_dim, hidden, classes, seed1),
            gcn2: GcnParams::init(input_dim, hidden, classes, seed2),
        }
    }

    pub fn peers(&self) -> [&GcnParams; 2] {
        [&self.gcn1, &self.gcn2]
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Graph};
    use crate::numerics::{finite_diff, relative_error};

    fn path3(features: DenseMatrix) -> (Graph, NormalizedAdjacency) {
        let g = Graph::new(2, [(0, 1), (1, 2)], features, vec![0, 1, 0]).unwrap();
        let a = normalize_adjacency(&g, None).unwrap();
        (g, a)
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        assert!((glorot_bound(4, 2) - 1.0).abs() < 1e-15);
        let p = GcnParams::init(4, 2, 3, 11);
        assert!(p.w1.as_slice().iter().all(|v| v.abs() <= 1.0));
        assert!(p.b1.iter().chain(&p.b2).all(|&v| v == 0.0));
        assert_eq!(p, GcnParams::init(4, 2, 3, 11));
        assert_ne!(p, GcnParams::init(4, 2, 3, 12));
    }

    #[test]
    fn single_node_zero_weights_uniform() {
        let g = Graph::new(3, [], DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap(), vec![0]).unwrap();
        let a = normalize_adjacency(&g, None).unwrap();
        let x = NodeFeatures::new(g.features());
        let p = GcnParams::init(2, 4, 3, 1).zeros_like();
        let c = forward(&a, &x, &p).unwrap();
        for &v in c.probs.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_first_layer_gives_bias_logits() {
        let (g, a) = path3(DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap());
        let x = NodeFeatures::new(g.features());
        let mut p = GcnParams::init(2, 3, 2, 5);
        p.w1 = DenseMatrix::zeros(2, 3);
        p.b2 = vec![0.3, -0.2];
        let c = forward(&a, &x, &p).unwrap();
        assert!(c.hidden.as_slice().iter().all(|&v| v == 0.0));
        for i in 0..3 {
            assert_eq!(c.logits.row(i), &[0.3, -0.2]);
        }
    }

    #[test]
    fn hand_computed_path_logits() {
        // d = H = C = 2 on the 3-node path; Ã entries follow from degrees [2, 3, 2].
        let (g, a) = path3(DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap());
        let x = NodeFeatures::new(g.features());
        let p = GcnParams {
            w1: DenseMatrix::from_rows(&[[1.0, -1.0], [0.5, 1.0]]).unwrap(),
            b1: vec![0.0, 0.1],
            w2: DenseMatrix::from_rows(&[[1.0, 0.0], [-1.0, 2.0]]).unwrap(),
            b2: vec![0.0, 0.5],
        };
        let s6 = 1.0 / 6f64.sqrt();
        let at = [[0.5, s6, 0.0], [s6, 1.0 / 3.0, s6], [0.0, s6, 0.5]];
        let xw = [[1.0, -1.0], [0.5, 1.0], [1.5, 0.0]];
        let mut h = [[0.0; 2]; 3];
        for i in 0..3 {
            for k in 0..2 {
                let mut s = [0.0, 0.1][k];
                for j in 0..3 {
                    s += at[i][j] * xw[j][k];
                }
                h[i][k] = f64::max(s, 0.0);
            }
        }
        let w2 = [[1.0, 0.0], [-1.0, 2.0]];
        let mut hw = [[0.0; 2]; 3];
        for i in 0..3 {
            for k in 0..2 {
                hw[i][k] = h[i][0] * w2[0][k] + h[i][1] * w2[1][k];
            }
        }
        let c = forward(&a, &x, &p).unwrap();
        for i in 0..3 {
            for k in 0..2 {
                let mut s = [0.0, 0.5][k];
                for j in 0..3 {
                    s += at[i][j] * hw[j][k];
                }
                assert!((c.logits.get(i, k) - s).abs() < 1e-12, "({i},{k})");
            }
        }
    }

    fn random_instance(seed: u64) -> (NormalizedAdjacency, NodeFeatures, GcnParams, DenseMatrix) {
        let mut rng = SeededRng::new(seed);
        let n = 5;
        let feats = DenseMatrix::from_fn(n, 3, |_, _| rng.gaussian());
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.bernoulli(0.5) {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::new(2, edges, feats, vec![0; n]).unwrap();
        let a = normalize_adjacency(&g, None).unwrap();
        let x = NodeFeatures::new(g.features());
        let mut p = GcnParams::init(3, 4, 2, seed + 100);
        p.b1 = (0..4).map(|_| 0.1 * rng.gaussian()).collect();
        let upstream = DenseMatrix::from_fn(n, 2, |_, _| rng.gaussian());
        (a, x, p, upstream)
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let (a, x, p, upstream) = random_instance(seed);
            let cache = forward(&a, &x, &p).unwrap();
            let grads = backward(&cache, &a, &x, &p, &upstream).unwrap();
            // Scalar = <upstream, logits>, whose logit gradient is `upstream`.
            let objective = |flat: &[f64]| {
                let q = p.unflatten_like(flat).unwrap();
                let c = forward(&a, &x, &q).unwrap();
                c.logits.as_slice().iter().zip(upstream.as_slice()).map(|(l, u)| l * u).sum::<f64>()
            };
            let numeric = finite_diff(objective, &p.flatten(), 1e-5);
            let err = relative_error(&grads.flatten(), &numeric);
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn backward_zero_and_linear() {
        let (a, x, p, upstream) = random_instance(42);
        let cache = forward(&a, &x, &p).unwrap();
        let zero = backward(&cache, &a, &x, &p, &DenseMatrix::zeros(5, 2)).unwrap();
        assert!(zero.flatten().iter().all(|&v| v == 0.0));
        let g1 = backward(&cache, &a, &x, &p, &upstream).unwrap();
        let mut doubled = upstream.clone();
        doubled.scale(2.0);
        let g2 = backward(&cache, &a, &x, &p, &doubled).unwrap();
        for (u, v) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
        assert!(backward(&cache, &a, &x, &p, &DenseMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let p = GcnParams::init(3, 2, 2, 9);
        assert_eq!(p.unflatten_like(&p.flatten()).unwrap(), p);
        assert!(p.unflatten_like(&[0.0]).is_err());
    }
}
