//! Small-loss division: per-node losses, a two-component 1-D Gaussian
//! mixture fitted by EM, clean posteriors and peer co-decision.

mod gmm;

pub use gmm::{fit_gmm_1d, percentile, GmmFit, VARIANCE_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clamped_ln, DenseMatrix};

/// `ℓ_i = -ln max(P[i, y_i], ε)` for each id, in the order given.
pub fn per_node_loss(probs: &DenseMatrix, observed: &[usize], ids: &[usize]) -> Result<Vec<f64>> {
    ids.iter()
        .map(|&i| {
            if i >= probs.rows() || i >= observed.len() {
                return Err(Error::invalid(format!("node {i} outside the labeled set")));
            }
            Ok(-clamped_ln(probs.get(i, observed[i])))
        })
        .collect()
}

/// Clean/noisy split of the training nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarsePartition {
    /// `V_cl`, ascending.
    pub clean: Vec<usize>,
    /// `V_N = train \ V_cl`, ascending.
    pub noisy: Vec<usize>,
    /// Per-peer clean probabilities aligned with `train_ids`.
    pub clean_probs: [Vec<f64>; 2],
}

impl CoarsePartition {
    /// Every training node is trusted.
    pub fn all_clean(train_ids: &[usize]) -> Self {
        let mut clean = train_ids.to_vec();
        clean.sort_unstable();
        Self {
            clean,
            noisy: Vec::new(),
            clean_probs: [vec![1.0; train_ids.len()], vec![1.0; train_ids.len()]],
        }
    }
}

/// `V_cl = {i : p1_i > p_th} ∩ {i : p2_i > p_th}`; the rest of `train_ids` is noisy.
pub fn co_decide(train_ids: &[usize], p1: &[f64], p2: &[f64], p_th: f64) -> Result<CoarsePartition> {
    if p1.len() != train_ids.len() || p2.len() != train_ids.len() {
        return Err(Error::shape(
            "co_decide",
            format!("{} ids, {} and {} probabilities", train_ids.len(), p1.len(), p2.len()),
        ));
    }
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for (k, &i) in train_ids.iter().enumerate() {
        if p1[k] > p_th && p2[k] > p_th {
            clean.push(i);
        } else {
            noisy.push(i);
        }
    }
    clean.sort_unstable();
    noisy.sort_unstable();
    Ok(CoarsePartition {
        clean,
        noisy,
        clean_probs: [p1.to_vec(), p2.to_vec()],
    })
}

/// Fits one mixture per peer on its training losses and co-decides.
pub fn coarse_divide(
    probs: [&DenseMatrix; 2],
    observed: &[usize],
    train_ids: &[usize],
    p_th: f64,
) -> Result<(CoarsePartition, [GmmFit; 2])> {
    let fit_peer = |p: &DenseMatrix| -> Result<(Vec<f64>, GmmFit)> {
        let losses = per_node_loss(p, observed, train_ids)?;
        let fit = fit_gmm_1d(&losses, 100, 1e-6)?;
        let post = losses.iter().map(|&l| fit.clean_posterior(l)).collect();
        Ok((post, fit))
    };
    let (post1, fit1) = fit_peer(probs[0])?;
    let (post2, fit2) = fit_peer(probs[1])?;
    Ok((co_decide(train_ids, &post1, &post2, p_th)?, [fit1, fit2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_analytic() {
        let e = std::f64::consts::E;
        let p = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [1.0 / e, 1.0 - 1.0 / e, 0.0, 0.0], [0.25; 4]]).unwrap();
        let l = per_node_loss(&p, &[0, 0, 3], &[0, 1, 2]).unwrap();
        assert_eq!(l[0], 0.0);
        assert!((l[1] - 1.0).abs() < 1e-15);
        assert!((l[2] - 4f64.ln()).abs() < 1e-15);
        assert!(per_node_loss(&p, &[0, 0, 3], &[5]).is_err());
        // Zero probability is clamped rather than infinite.
        let l = per_node_loss(&p, &[1, 0, 0], &[0]).unwrap();
        assert!((l[0] + 1e-12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn co_decide_cases() {
        let ids = [3, 5, 7];
        let part = co_decide(&ids, &[1.0; 3], &[1.0; 3], 1.0).unwrap();
        assert!(part.clean.is_empty());
        assert_eq!(part.noisy, vec![3, 5, 7]);
        let part = co_decide(&ids, &[1.0; 3], &[1.0; 3], 0.5).unwrap();
        assert_eq!(part.clean, vec![3, 5, 7]);
        let part = co_decide(&ids, &[0.9, 0.9, 0.1], &[0.1, 0.9, 0.9], 0.5).unwrap();
        assert_eq!(part.clean, vec![5]);
        assert_eq!(part.noisy, vec![3, 7]);
        assert!(co_decide(&ids, &[1.0], &[1.0; 3], 0.5).is_err());
    }
}
