//! Weighted label loss, inter/intra consistency regularizer and the total
//! objective, with gradients for both peers and the edge encoder.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{reconstruction_loss, EdgePredictor, NegativeSamples};
use crate::coarse::CoarsePartition;
use crate::error::{Error, Result};
use crate::fine::FinePartition;
use crate::gcn::{self, ForwardCache, GcnParams, NodeFeatures, PeerModel};
use crate::graph::{Graph, NormalizedAdjacency};
use crate::numerics::{clamped_ln, DenseMatrix, SparseMatrix, LOG_EPS};

/// Denominator of the label loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelNorm {
    /// Number of training nodes `|V_L|`.
    Vl,
    /// Number of nodes with positive weight.
    #[default]
    Supervised,
}

/// Nodes averaged over by the consistency regularizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegSet {
    #[serde(rename = "vl")]
    Vl,
    #[default]
    #[serde(rename = "vl+pl")]
    VlPl,
    #[serde(rename = "all")]
    All,
}

impl FromStr for LabelNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vl" => Ok(Self::Vl),
            "supervised" => Ok(Self::Supervised),
            _ => Err(Error::invalid(format!("label norm `{s}`, expected vl or supervised"))),
        }
    }
}

impl fmt::Display for LabelNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vl => "vl",
            Self::Supervised => "supervised",
        })
    }
}

impl FromStr for RegSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vl" => Ok(Self::Vl),
            "vl+pl" => Ok(Self::VlPl),
            "all" => Ok(Self::All),
            _ => Err(Error::invalid(format!("reg set `{s}`, expected vl, vl+pl or all"))),
        }
    }
}

impl fmt::Display for RegSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vl => "vl",
            Self::VlPl => "vl+pl",
            Self::All => "all",
        })
    }
}

impl RegSet {
    /// Sorted node ids for this set.
    pub fn nodes(&self, num_nodes: usize, train_ids: &[usize], fine: &FinePartition) -> Vec<usize> {
        let mut ids: Vec<usize> = match self {
            Self::Vl => train_ids.to_vec(),
            Self::VlPl => train_ids.iter().copied().chain(fine.pseudo.iter().map(|&(i, _)| i)).collect(),
            Self::All => (0..num_nodes).collect(),
        };
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Per-node weight `ω` and effective label `ŷ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisionWeights {
    pub weight: Vec<f64>,
    pub target: Vec<usize>,
}

impl SupervisionWeights {
    /// `ω = 1` on `V_cl`, `V_cf`, `V_pl`; `β` on `V_re`; 0 elsewhere.
    pub fn build(observed: &[usize], coarse: &CoarsePartition, fine: &FinePartition, beta: f64) -> Self {
        let n = observed.len();
        let mut weight = vec![0.0; n];
        let mut target = observed.to_vec();
        for &i in &coarse.clean {
            weight[i] = 1.0;
        }
        for &(i, z) in &fine.confident {
            weight[i] = 1.0;
            target[i] = z;
        }
        for &i in &fine.remaining {
            weight[i] = beta;
        }
        for &(i, z) in &fine.pseudo {
            weight[i] = 1.0;
            target[i] = z;
        }
        Self { weight, target }
    }

    /// Ids with `ω > 0`, ascending.
    pub fn supervised(&self) -> Vec<usize> {
        (0..self.weight.len()).filter(|&i| self.weight[i] > 0.0).collect()
    }
}

/// `-(1/|S|) Σ_{i∈S} ω_i ln(P1[i,ŷ_i]·P2[i,ŷ_i])` and its logit gradients.
///
/// `|S|` is the supervised count or `num_labeled`, depending on `norm`.
pub fn label_loss(
    p1: &DenseMatrix,
    p2: &DenseMatrix,
    w: &SupervisionWeights,
    norm: LabelNorm,
    num_labeled: usize,
) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    if p1.shape() != p2.shape() || p1.rows() != w.weight.len() {
        return Err(Error::shape("label_loss", format!("{:?} vs {:?}", p1.shape(), p2.shape())));
    }
    let mut g1 = DenseMatrix::zeros(p1.rows(), p1.cols());
    let mut g2 = DenseMatrix::zeros(p2.rows(), p2.cols());
    let ids = w.supervised();
    let denom = match norm {
        LabelNorm::Supervised => ids.len(),
        LabelNorm::Vl => num_labeled,
    };
    if ids.is_empty() || denom == 0 {
        log::warn!("label loss over an empty supervised set");
        return Ok((0.0, g1, g2));
    }
    let scale = 1.0 / denom as f64;
    let mut loss = 0.0;
    for &i in &ids {
        let y = w.target[i];
        let om = w.weight[i] * scale;
        for (p, g) in [(p1, &mut g1), (p2, &mut g2)] {
            let py = p.get(i, y);
            loss -= om * clamped_ln(py);
            // The clamped log is flat below ε.
            if py > LOG_EPS {
                let row = g.row_mut(i);
                for (gc, &pc) in row.iter_mut().zip(p.row(i)) {
                    *gc = om * pc;
                }
                row[y] -= om;
            }
        }
    }
    Ok((loss, g1, g2))
}

/// `Σ_c p_c (ln p_c - ln q_c)` with clamped logs.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (clamped_ln(a) - clamped_ln(b))).sum()
}

fn add_kl_grad_p(p: &[f64], q: &[f64], coef: f64, out: &mut [f64]) {
    for c in 0..p.len() {
        let own = if p[c] > LOG_EPS { 1.0 } else { 0.0 };
        out[c] += coef * (clamped_ln(p[c]) + own - clamped_ln(q[c]));
    }
}

fn add_kl_grad_q(p: &[f64], q: &[f64], coef: f64, out: &mut [f64]) {
    for c in 0..p.len() {
        if q[c] > LOG_EPS {
            out[c] -= coef * p[c] / q[c];
        }
    }
}

/// Chain rule through the row softmax: `dz = P ⊙ (g - <g, P>)`, in place.
fn softmax_backward(probs: &DenseMatrix, grad: &mut DenseMatrix) {
    grad.as_mut_slice()
        .par_chunks_mut(probs.cols().max(1))
        .enumerate()
        .for_each(|(i, g)| {
            let p = probs.row(i);
            let inner: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
            g.iter_mut().zip(p).for_each(|(a, &b)| *a = b * (*a - inner));
        });
}

#[derive(Clone, Debug)]
pub struct ConsistencyTerms {
    pub inter: f64,
    pub intra: f64,
    /// Logit gradients of `inter + intra`.
    pub grad1: DenseMatrix,
    pub grad2: DenseMatrix,
}

/// Mean over `nodes` of the symmetric peer KL plus the neighbor-weighted
/// KL within each peer, with weights from `row_weights` (row-normalized
/// `Â + I`).
pub fn consistency_loss(
    p1: &DenseMatrix,
    p2: &DenseMatrix,
    row_weights: &SparseMatrix,
    nodes: &[usize],
) -> Result<ConsistencyTerms> {
    let (n, c) = p1.shape();
    if p2.shape() != (n, c) || row_weights.rows() != n || row_weights.cols() != n {
        return Err(Error::shape("consistency_loss", format!("P {:?}, weights {}", p1.shape(), row_weights.rows())));
    }
    let mut grad1 = DenseMatrix::zeros(n, c);
    let mut grad2 = DenseMatrix::zeros(n, c);
    if nodes.is_empty() {
        return Ok(ConsistencyTerms { inter: 0.0, intra: 0.0, grad1, grad2 });
    }
    let scale = 1.0 / nodes.len() as f64;
    let mut in_set = vec![false; n];
    nodes.iter().for_each(|&i| in_set[i] = true);

    let terms: Vec<(f64, f64)> = nodes
        .par_iter()
        .map(|&i| {
            let inter = kl(p1.row(i), p2.row(i)) + kl(p2.row(i), p1.row(i));
            let (cols, vals) = row_weights.row(i);
            let intra = cols
                .iter()
                .zip(vals)
                .filter(|&(&j, _)| j != i)
                .map(|(&j, &r)| r * (kl(p1.row(j), p1.row(i)) + kl(p2.row(j), p2.row(i))))
                .sum::<f64>();
            (inter, intra)
        })
        .collect();
    let inter = terms.iter().map(|t| t.0).sum::<f64>() * scale;
    let intra = terms.iter().map(|t| t.1).sum::<f64>() * scale;

    // Row k collects: its own inter terms, its role as the second argument
    // of its neighbors' KLs (when k is in the set), and its role as the first
    // argument in the KLs of set members that weight it.
    let incoming = row_weights.transpose();
    let fill = |k: usize, g: &mut [f64], own: &DenseMatrix, other: &DenseMatrix| {
        let pk = own.row(k);
        if in_set[k] {
            add_kl_grad_p(pk, other.row(k), scale, g);
            add_kl_grad_q(other.row(k), pk, scale, g);
            let (cols, vals) = row_weights.row(k);
            for (&j, &r) in cols.iter().zip(vals) {
                if j != k {
                    add_kl_grad_q(own.row(j), pk, scale * r, g);
                }
            }
        }
        let (cols, vals) = incoming.row(k);
        for (&i, &r) in cols.iter().zip(vals) {
            if i != k && in_set[i] {
                add_kl_grad_p(pk, own.row(i), scale * r, g);
            }
        }
    };
    grad1
        .as_mut_slice()
        .par_chunks_mut(c)
        .enumerate()
        .for_each(|(k, g)| fill(k, g, p1, p2));
    grad2
        .as_mut_slice()
        .par_chunks_mut(c)
        .enumerate()
        .for_each(|(k, g)| fill(k, g, p2, p1));
    softmax_backward(p1, &mut grad1);
    softmax_backward(p2, &mut grad2);
    Ok(ConsistencyTerms { inter, intra, grad1, grad2 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_label: f64,
    pub l_rec: f64,
    pub l_reg_inter: f64,
    pub l_reg_intra: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// `l_total = l_label + α·l_rec + λ·(inter + intra)`.
    pub fn total(l_label: f64, l_rec: f64, l_reg_inter: f64, l_reg_intra: f64, alpha: f64, lambda: f64) -> Self {
        Self {
            l_label,
            l_rec,
            l_reg_inter,
            l_reg_intra,
            l_total: l_label + alpha * l_rec + lambda * (l_reg_inter + l_reg_intra),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_label, self.l_rec, self.l_reg_inter, self.l_reg_intra, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Everything the objective holds fixed within one epoch.
pub struct ObjectiveContext<'a> {
    pub graph: &'a Graph,
    pub features: &'a NodeFeatures,
    /// Normalized original adjacency, used by the encoder.
    pub base_adj: &'a NormalizedAdjacency,
    /// Normalized augmented adjacency, used by both peers.
    pub aug_adj: &'a NormalizedAdjacency,
    /// Row-normalized `Â + I` for the intra-peer term.
    pub reg_weights: &'a SparseMatrix,
    pub supervision: &'a SupervisionWeights,
    pub label_norm: LabelNorm,
    pub num_labeled: usize,
    pub reg_nodes: &'a [usize],
    pub negatives: &'a NegativeSamples,
    pub n_neg: usize,
    pub alpha: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub gcn1: GcnParams,
    pub gcn2: GcnParams,
    pub encoder: Option<GcnParams>,
}

/// Loss and gradients given forward caches for both peers (on `Â`) and,
/// when the encoder is trained, for the encoder (on the original graph).
///
/// `Â` is treated as a constant: the encoder only receives `α·∂L_rec`.
pub fn evaluate_cached(
    ctx: &ObjectiveContext<'_>,
    model: &PeerModel,
    peer_caches: [&ForwardCache; 2],
    encoder: Option<(&EdgePredictor, &ForwardCache)>,
) -> Result<(LossBreakdown, Gradients)> {
    let [c1, c2] = peer_caches;
    let (l_label, mut g1, mut g2) = label_loss(&c1.probs, &c2.probs, ctx.supervision, ctx.label_norm, ctx.num_labeled)?;
    let (inter, intra) = if ctx.lambda > 0.0 {
        let reg = consistency_loss(&c1.probs, &c2.probs, ctx.reg_weights, ctx.reg_nodes)?;
        g1.add_scaled(ctx.lambda, &reg.grad1)?;
        g2.add_scaled(ctx.lambda, &reg.grad2)?;
        (reg.inter, reg.intra)
    } else {
        (0.0, 0.0)
    };
    let gcn1 = gcn::backward(c1, ctx.aug_adj, ctx.features, &model.gcn1, &g1)?;
    let gcn2 = gcn::backward(c2, ctx.aug_adj, ctx.features, &model.gcn2, &g2)?;
    let (l_rec, encoder_grad) = match encoder {
        Some((enc, cache)) => {
            let (l_rec, mut gz) = reconstruction_loss(&cache.logits, ctx.graph, ctx.negatives, ctx.n_neg)?;
            gz.scale(ctx.alpha);
            let grad = gcn::backward(cache, ctx.base_adj, ctx.features, &enc.encoder, &gz)?;
            (l_rec, Some(grad))
        }
        None => (0.0, None),
    };
    let breakdown = LossBreakdown::total(l_label, l_rec, inter, intra, ctx.alpha, ctx.lambda);
    Ok((breakdown, Gradients { gcn1, gcn2, encoder: encoder_grad }))
}

/// Runs the forward passes, then [`evaluate_cached`].
pub fn evaluate(
    ctx: &ObjectiveContext<'_>,
    model: &PeerModel,
    encoder: Option<&EdgePredictor>,
) -> Result<(LossBreakdown, Gradients)> {
    let c1 = gcn::forward(ctx.aug_adj, ctx.features, &model.gcn1)?;
    let c2 = gcn::forward(ctx.aug_adj, ctx.features, &model.gcn2)?;
    let enc = match encoder {
        Some(e) => Some((e, gcn::forward(ctx.base_adj, ctx.features, &e.encoder)?)),
        None => None,
    };
    evaluate_cached(ctx, model, [&c1, &c2], enc.as_ref().map(|(e, c)| (*e, c)))
}
