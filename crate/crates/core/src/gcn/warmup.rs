use super::{backward, forward, ForwardCache, GcnParams, NodeFeatures, PeerModel};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::numerics::{clamped_ln, AdamConfig, AdamState, DenseMatrix};

/// Adam states for the two peers; warm-up and main training share them.
#[derive(Clone, Debug)]
pub struct PeerOptimizers {
    pub gcn1: AdamState,
    pub gcn2: AdamState,
}

impl PeerOptimizers {
    pub fn new(model: &PeerModel, config: AdamConfig) -> Self {
        Self {
            gcn1: model.gcn1.adam_state(config),
            gcn2: model.gcn2.adam_state(config),
        }
    }
}

/// Mean cross-entropy over `ids` and its gradient with respect to the logits.
pub fn cross_entropy_grad(probs: &DenseMatrix, labels: &[usize], ids: &[usize]) -> Result<(f64, DenseMatrix)> {
    if ids.is_empty() {
        return Err(Error::invalid("cross-entropy over an empty node set"));
    }
    let scale = 1.0 / ids.len() as f64;
    let mut grad = DenseMatrix::zeros(probs.rows(), probs.cols());
    let mut loss = 0.0;
    for &i in ids {
        let y = labels[i];
        loss -= clamped_ln(probs.get(i, y));
        let row = grad.row_mut(i);
        for (g, &p) in row.iter_mut().zip(probs.row(i)) {
            *g = p * scale;
        }
        row[y] -= scale;
    }
    Ok((loss * scale, grad))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WarmupRecord {
    pub epoch: usize,
    pub loss1: f64,
    pub loss2: f64,
}

/// One cross-entropy step; returns the pre-update loss and forward cache.
pub fn ce_step(
    params: &mut GcnParams,
    state: &mut AdamState,
    name: &str,
    adj: &NormalizedAdjacency,
    x: &NodeFeatures,
    labels: &[usize],
    train_ids: &[usize],
) -> Result<(f64, ForwardCache)> {
    let cache = forward(adj, x, params)?;
    let (loss, grad) = cross_entropy_grad(&cache.probs, labels, train_ids)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{name} cross-entropy")));
    }
    let grads = backward(&cache, adj, x, params, &grad)?;
    params.apply_adam(state, &grads, name)?;
    Ok((loss, cache))
}

/// Trains each peer independently with mean cross-entropy on `train_ids`.
///
/// Returns the pre-update loss of every epoch.
pub fn warmup(
    model: &mut PeerModel,
    optimizers: &mut PeerOptimizers,
    adj: &NormalizedAdjacency,
    x: &NodeFeatures,
    labels: &[usize],
    train_ids: &[usize],
    epochs: usize,
) -> Result<Vec<WarmupRecord>> {
    if train_ids.is_empty() {
        return Err(Error::invalid("warm-up needs a non-empty training set"));
    }
    let mut records = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let wrap = |e| Error::Epoch { epoch, source: Box::new(e) };
        let (loss1, _) = ce_step(&mut model.gcn1, &mut optimizers.gcn1, "gcn1", adj, x, labels, train_ids).map_err(wrap)?;
        let (loss2, _) = ce_step(&mut model.gcn2, &mut optimizers.gcn2, "gcn2", adj, x, labels, train_ids).map_err(wrap)?;
        records.push(WarmupRecord { epoch, loss1, loss2 });
    }
    Ok(records)
}
