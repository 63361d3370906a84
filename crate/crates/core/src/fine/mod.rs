//! Confidence-based relabeling of noisy nodes and pseudo-labeling of
//! unlabeled nodes.

use serde::{Deserialize, Serialize};

use crate::numerics::{argmax, DenseMatrix};

/// Five-way refinement of the noisy and unlabeled sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinePartition {
    /// `V_cf`: noisy nodes with a confident replacement label `(id, ẑ)`.
    pub confident: Vec<(usize, usize)>,
    /// `V_re = V_N \ V_cf`.
    pub remaining: Vec<usize>,
    /// `V_pl`: unlabeled nodes with a pseudo-label `(id, z̃)`.
    pub pseudo: Vec<(usize, usize)>,
    /// `V_un = V_U \ V_pl`.
    pub unlabeled: Vec<usize>,
}

impl FinePartition {
    /// No relabeling and no pseudo-labels.
    pub fn trivial(noisy: &[usize], unlabeled: &[usize]) -> Self {
        Self {
            confident: Vec::new(),
            remaining: noisy.to_vec(),
            pseudo: Vec::new(),
            unlabeled: unlabeled.to_vec(),
        }
    }
}

/// Peer-agreed label and its confidence `sqrt(P1[i,c]·P2[i,c])`, or `None`
/// when the peers' argmaxes differ. Ties resolve to the lowest class index.
pub fn agreed_label(p1: &[f64], p2: &[f64]) -> Option<(usize, f64)> {
    let c = argmax(p1);
    (c == argmax(p2)).then(|| (c, (p1[c] * p2[c]).sqrt()))
}

/// Splits `V_N` into `V_cf` (agreed, confident, and contradicting the
/// observed label) and `V_re`.
pub fn relabel_noisy(
    p1: &DenseMatrix,
    p2: &DenseMatrix,
    noisy: &[usize],
    observed: &[usize],
    th: f64,
) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut confident = Vec::new();
    let mut remaining = Vec::new();
    for &i in noisy {
        match agreed_label(p1.row(i), p2.row(i)) {
            Some((z, conf)) if conf > th && z != observed[i] => confident.push((i, z)),
            _ => remaining.push(i),
        }
    }
    (confident, remaining)
}

/// Splits `V_U` into `V_pl` (agreed and confident) and `V_un`.
pub fn pseudo_label_unlabeled(
    p1: &DenseMatrix,
    p2: &DenseMatrix,
    unlabeled: &[usize],
    th: f64,
) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut pseudo = Vec::new();
    let mut rest = Vec::new();
    for &i in unlabeled {
        match agreed_label(p1.row(i), p2.row(i)) {
            Some((z, conf)) if conf > th => pseudo.push((i, z)),
            _ => rest.push(i),
        }
    }
    (pseudo, rest)
}

pub fn fine_divide(
    p1: &DenseMatrix,
    p2: &DenseMatrix,
    noisy: &[usize],
    unlabeled: &[usize],
    observed: &[usize],
    th_noisy: f64,
    th_unlabeled: f64,
) -> FinePartition {
    let (confident, remaining) = relabel_noisy(p1, p2, noisy, observed, th_noisy);
    let (pseudo, unlabeled) = pseudo_label_unlabeled(p1, p2, unlabeled, th_unlabeled);
    FinePartition {
        confident,
        remaining,
        pseudo,
        unlabeled,
    }
}
