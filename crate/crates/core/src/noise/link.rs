use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NoiseRecord;
use crate::coarse::coarse_divide;
use crate::error::{Error, Result};
use crate::gcn::{self, warmup, NodeFeatures, PeerModel, PeerOptimizers};
use crate::graph::{normalize_adjacency, Graph, SplitMasks};
use crate::trainer::{peer_seeds, prepare_graph, train_baseline, TrainConfig, TrainInputs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkStrategy {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "linkL")]
    LinkL,
    #[serde(rename = "linkCL_oracle")]
    LinkClOracle,
    #[serde(rename = "linkCL_gmm")]
    LinkClGmm,
}

impl LinkStrategy {
    pub const ALL: [LinkStrategy; 4] = [Self::None, Self::LinkL, Self::LinkClOracle, Self::LinkClGmm];
}

impl fmt::Display for LinkStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::LinkL => "linkL",
            Self::LinkClOracle => "linkCL_oracle",
            Self::LinkClGmm => "linkCL_gmm",
        })
    }
}

impl FromStr for LinkStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("link strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub strategy: LinkStrategy,
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    /// Share of added edges whose labeled endpoint carries a flipped label.
    pub noisy_neighbor_fraction: f64,
    pub added_edges: usize,
}

/// For each unlabeled node, the `k` labeled nodes with the highest raw-feature
/// cosine similarity (ties to the lower id), best first.
pub fn top_k_similar_labeled(g: &Graph, labeled: &[usize], unlabeled: &[usize], k: usize) -> Vec<Vec<usize>> {
    let x = NodeFeatures::new(g.features());
    let csr = x.matrix();
    let row_norm = |i: usize| csr.row(i).1.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Labeled rows, unit-normalized and stored feature-major so each nonzero
    // of an unlabeled row updates all scores with one axpy.
    let nl = labeled.len();
    let mut by_feature = vec![0.0; g.feature_dim() * nl];
    for (slot, &j) in labeled.iter().enumerate() {
        let nj = row_norm(j);
        if nj == 0.0 {
            continue;
        }
        let (cols, vals) = csr.row(j);
        for (&f, &v) in cols.iter().zip(vals) {
            by_feature[f * nl + slot] = v / nj;
        }
    }
    unlabeled
        .par_iter()
        .map(|&i| {
            let ni = row_norm(i);
            let mut scores = vec![0.0; nl];
            if ni > 0.0 {
                let (cols, vals) = csr.row(i);
                for (&f, &v) in cols.iter().zip(vals) {
                    crate::numerics::axpy(v / ni, &by_feature[f * nl..(f + 1) * nl], &mut scores);
                }
            }
            let mut order: Vec<usize> = (0..nl).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap_or(Ordering::Equal)
                    .then(labeled[a].cmp(&labeled[b]))
            });
            order.truncate(k);
            order.into_iter().map(|s| labeled[s]).collect()
        })
        .collect()
}

/// Adds binary edges from each unlabeled node to (a subset of) its top-`k`
/// most similar labeled nodes, then trains a plain GCN on the result.
///
/// The clean-only strategies keep just the clean nodes of that top-`k` list:
/// truly clean ones for the oracle, the co-decided clean set after warm-up
/// for the mixture variant.
pub fn link_strategy_experiment(
    g: &Graph,
    record: &NoiseRecord,
    masks: &SplitMasks,
    strategy: LinkStrategy,
    k: usize,
    cfg: &TrainConfig,
) -> Result<LinkResult> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let n = g.num_nodes();
    let observed = &record.observed_labels;
    let noisy_flags: Vec<bool> = record.clean_flags().iter().map(|c| !c).collect();
    let unlabeled = masks.unlabeled(n);

    let allowed: Option<Vec<bool>> = match strategy {
        LinkStrategy::None | LinkStrategy::LinkL => None,
        LinkStrategy::LinkClOracle => Some(noisy_flags.iter().map(|f| !f).collect()),
        LinkStrategy::LinkClGmm => {
            let prepared = prepare_graph(g, cfg);
            let x = NodeFeatures::new(prepared.features());
            let adj = normalize_adjacency(&prepared, None)?;
            let (s1, s2) = peer_seeds(cfg.seed);
            let mut model = PeerModel::init(g.feature_dim(), cfg.hidden, g.num_classes(), s1, s2);
            let mut opt = PeerOptimizers::new(&model, cfg.adam());
            warmup(&mut model, &mut opt, &adj, &x, observed, &masks.train, cfg.warmup)?;
            let p1 = gcn::forward(&adj, &x, &model.gcn1)?.probs;
            let p2 = gcn::forward(&adj, &x, &model.gcn2)?.probs;
            let (part, _) = coarse_divide([&p1, &p2], observed, &masks.train, cfg.p_th)?;
            let mut flags = vec![false; n];
            part.clean.iter().for_each(|&i| flags[i] = true);
            Some(flags)
        }
    };

    let mut edges: Vec<(usize, usize)> = g.edges().collect();
    let mut added = 0usize;
    let mut noisy = 0usize;
    if strategy != LinkStrategy::None {
        let lists = top_k_similar_labeled(g, &masks.train, &unlabeled, k);
        for (&i, list) in unlabeled.iter().zip(&lists) {
            for &j in list {
                if allowed.as_ref().is_some_and(|a| !a[j]) || g.has_edge(i, j) {
                    continue;
                }
                edges.push((i, j));
                added += 1;
                if noisy_flags[j] {
                    noisy += 1;
                }
            }
        }
    }
    let linked = Graph::new(g.num_classes(), edges, g.features().clone(), g.labels().to_vec())?;
    let out = train_baseline(
        TrainInputs {
            graph: &linked,
            observed,
            masks,
            clean_truth: None,
        },
        None,
        cfg,
    )?;
    Ok(LinkResult {
        strategy,
        test_accuracy: out.test_acc,
        val_accuracy: out.val_acc,
        noisy_neighbor_fraction: if added == 0 { 0.0 } else { noisy as f64 / added as f64 },
        added_edges: added,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;

    #[test]
    fn top_k_by_cosine() {
        let f = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.1]]).unwrap();
        let g = Graph::new(2, [], f, vec![0, 1, 0, 0]).unwrap();
        let lists = top_k_similar_labeled(&g, &[0, 1, 2], &[3], 2);
        assert_eq!(lists, vec![vec![0, 2]]);
        // Fewer candidates than k links to all of them.
        assert_eq!(top_k_similar_labeled(&g, &[1], &[3], 5), vec![vec![1]]);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in LinkStrategy::ALL {
            assert_eq!(s.to_string().parse::<LinkStrategy>().unwrap(), s);
        }
    }
}
