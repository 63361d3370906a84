//! Training loop: warm-up, then per epoch coarse division, augmentation,
//! fine division, the total loss and one optimizer step for all parameter
//! groups. Also the plain-GCN baseline, inference and accuracy.

mod config;

pub use config::TrainConfig;

use serde::{Deserialize, Serialize};

use crate::augment::{self, check_augmentation, AugmentViolations, AugmentedGraph, EdgePredictor, NegativeSamples};
use crate::coarse::{coarse_divide, CoarsePartition};
use crate::error::{Error, Result};
use crate::fine::{fine_divide, FinePartition};
use crate::gcn::{self, ce_step, GcnParams, NodeFeatures, PeerModel, PeerOptimizers};
use crate::graph::{normalize_adjacency, row_normalized_with_self_loops, Graph, NormalizedAdjacency, SplitMasks};
use crate::noise::{division_quality, DivisionQuality};
use crate::numerics::{argmax, derive_seed, DenseMatrix, SeededRng};
use crate::objective::{evaluate_cached, LossBreakdown, ObjectiveContext, SupervisionWeights};

/// Seed tags for the independent streams derived from `TrainConfig::seed`.
const SEED_GCN1: u64 = 1;
const SEED_GCN2: u64 = 2;
const SEED_ENCODER: u64 = 3;
const SEED_NEGATIVES: u64 = 4;

pub fn peer_seeds(seed: u64) -> (u64, u64) {
    (derive_seed(seed, SEED_GCN1), derive_seed(seed, SEED_GCN2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Main,
}

/// Node-set sizes of one epoch's partitions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSizes {
    pub v_cl: usize,
    pub v_n: usize,
    pub v_cf: usize,
    pub v_re: usize,
    pub v_pl: usize,
    pub v_un: usize,
}

impl PartitionSizes {
    fn of(coarse: &CoarsePartition, fine: &FinePartition) -> Self {
        Self {
            v_cl: coarse.clean.len(),
            v_n: coarse.noisy.len(),
            v_cf: fine.confident.len(),
            v_re: fine.remaining.len(),
            v_pl: fine.pseudo.len(),
            v_un: fine.unlabeled.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// For warm-up epochs `l_label` holds the sum of both peers' cross-entropies.
    pub loss: LossBreakdown,
    pub partition: Option<PartitionSizes>,
    pub added_edges: usize,
    pub violations: AugmentViolations,
    pub gmm_degenerate: [bool; 2],
    /// Precision/recall of `V_cl` against the true clean set, when known.
    pub division: Option<DivisionQuality>,
    /// Fraction of pseudo-labels in `V_pl` that match the ground truth.
    pub pseudo_label_acc: Option<f64>,
    /// Fraction of added edges whose endpoints share a ground-truth class.
    pub added_same_class: Option<f64>,
    /// Accuracy of peer 1 before this epoch's update.
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Parameters and adjacency of the best-validation epoch.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub model: PeerModel,
    pub encoder: Option<EdgePredictor>,
    pub augmented: AugmentedGraph,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub best: Snapshot,
    pub history: Vec<EpochRecord>,
}

/// Labels, masks and optional ground truth for one run.
#[derive(Clone, Copy, Debug)]
pub struct TrainInputs<'a> {
    pub graph: &'a Graph,
    /// Observed (possibly corrupted) labels, length N; only training ids are read for supervision.
    pub observed: &'a [usize],
    pub masks: &'a SplitMasks,
    /// Per-node flag: observed label equals ground truth. Enables division metrics.
    pub clean_truth: Option<&'a [bool]>,
}

/// Graph with features prepared as the config asks.
pub fn prepare_graph(g: &Graph, cfg: &TrainConfig) -> Graph {
    if cfg.normalize_features {
        g.with_row_normalized_features()
    } else {
        g.clone()
    }
}

/// Argmax of peer 1 on the given adjacency; ties go to the lowest class.
pub fn infer(model: &PeerModel, adj: &NormalizedAdjacency, x: &NodeFeatures) -> Result<Vec<usize>> {
    Ok(predictions(&gcn::forward(adj, x, &model.gcn1)?.probs))
}

pub fn predictions(probs: &DenseMatrix) -> Vec<usize> {
    probs.row_iter().map(argmax).collect()
}

/// Fraction of `mask` where `pred` equals `truth`.
pub fn evaluate(pred: &[usize], truth: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::invalid("accuracy over an empty mask"));
    }
    let correct = mask.iter().filter(|&&i| pred[i] == truth[i]).count();
    Ok(correct as f64 / mask.len() as f64)
}

fn check_inputs(inp: &TrainInputs<'_>, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    let n = inp.graph.num_nodes();
    inp.masks.validate(n)?;
    if inp.masks.train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if inp.observed.len() != n {
        return Err(Error::invalid(format!("{} observed labels for {n} nodes", inp.observed.len())));
    }
    if inp.observed.iter().any(|&y| y >= inp.graph.num_classes()) {
        return Err(Error::invalid("observed label outside [0, C)"));
    }
    if inp.clean_truth.is_some_and(|t| t.len() != n) {
        return Err(Error::invalid("clean-truth mask length differs from node count"));
    }
    Ok(())
}

struct Tracker {
    best: Option<Snapshot>,
}

impl Tracker {
    /// Keeps the first epoch with the highest validation accuracy among finite-loss epochs.
    fn offer(&mut self, rec: &EpochRecord, make: impl FnOnce() -> Snapshot) {
        if !rec.loss.is_finite() || !rec.val_acc.is_finite() {
            return;
        }
        if self.best.as_ref().is_none_or(|b| rec.val_acc > b.val_acc) {
            self.best = Some(make());
        }
    }
}

/// Runs the full method.
pub fn train(inp: TrainInputs<'_>, cfg: &TrainConfig) -> Result<TrainOutput> {
    check_inputs(&inp, cfg)?;
    let g = prepare_graph(inp.graph, cfg);
    let n = g.num_nodes();
    let truth = g.labels();
    let train_ids = &inp.masks.train;
    let unlabeled = inp.masks.unlabeled(n);
    let (val, test) = (&inp.masks.val, &inp.masks.test);
    let x = NodeFeatures::new(g.features());
    let base_adj = normalize_adjacency(&g, None)?;
    let adam = cfg.adam();

    let (s1, s2) = peer_seeds(cfg.seed);
    let mut model = PeerModel::init(g.feature_dim(), cfg.hidden, g.num_classes(), s1, s2);
    let mut opt = PeerOptimizers::new(&model, adam);
    let mut encoder = (cfg.alpha > 0.0).then(|| {
        EdgePredictor::init(g.feature_dim(), cfg.edge_hidden, cfg.edge_embed, derive_seed(cfg.seed, SEED_ENCODER))
    });
    let mut enc_opt = encoder.as_ref().map(|e| e.encoder.adam_state(adam));
    let mut rng = SeededRng::new(derive_seed(cfg.seed, SEED_NEGATIVES));
    let no_negatives = NegativeSamples { per_node: vec![Vec::new(); n] };

    let mut aug = AugmentedGraph::unchanged(&g);
    let mut aug_adj = base_adj.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut tracker = Tracker { best: None };
    let acc = |probs: &DenseMatrix, mask: &[usize]| -> f64 {
        if mask.is_empty() {
            return f64::NAN;
        }
        evaluate(&predictions(probs), truth, mask).unwrap_or(f64::NAN)
    };

    for epoch in 0..cfg.warmup {
        let wrap = |e| Error::Epoch { epoch, source: Box::new(e) };
        let before = model.clone();
        let (l1, cache) = ce_step(&mut model.gcn1, &mut opt.gcn1, "gcn1", &base_adj, &x, inp.observed, train_ids).map_err(wrap)?;
        let (l2, _) = ce_step(&mut model.gcn2, &mut opt.gcn2, "gcn2", &base_adj, &x, inp.observed, train_ids).map_err(wrap)?;
        let rec = EpochRecord {
            epoch,
            phase: Phase::Warmup,
            loss: LossBreakdown::total(l1 + l2, 0.0, 0.0, 0.0, 0.0, 0.0),
            partition: None,
            added_edges: 0,
            violations: AugmentViolations::default(),
            gmm_degenerate: [false; 2],
            division: None,
            pseudo_label_acc: None,
            added_same_class: None,
            val_acc: acc(&cache.probs, val),
            test_acc: acc(&cache.probs, test),
        };
        tracker.offer(&rec, || Snapshot {
            epoch,
            model: before,
            encoder: encoder.clone(),
            augmented: aug.clone(),
            val_acc: rec.val_acc,
            test_acc: rec.test_acc,
        });
        history.push(rec);
    }

    for epoch in cfg.warmup..cfg.epochs {
        let wrap = |e| Error::Epoch { epoch, source: Box::new(e) };
        let res = main_epoch(
            epoch,
            cfg,
            &g,
            &x,
            &base_adj,
            inp,
            &unlabeled,
            &mut model,
            &mut opt,
            encoder.as_mut().zip(enc_opt.as_mut()),
            &mut rng,
            &no_negatives,
            &mut aug,
            &mut aug_adj,
        )
        .map_err(wrap)?;
        let EpochOutcome { mut rec, p1, model_before, encoder_before } = res;
        rec.val_acc = acc(&p1, val);
        rec.test_acc = acc(&p1, test);
        tracker.offer(&rec, || Snapshot {
            epoch,
            model: model_before,
            encoder: encoder_before,
            augmented: aug.clone(),
            val_acc: rec.val_acc,
            test_acc: rec.test_acc,
        });
        history.push(rec);
    }

    let best = match tracker.best {
        Some(b) => b,
        None => {
            // No epochs, or no finite validation accuracy: report the initial state.
            let probs = gcn::forward(&base_adj, &x, &model.gcn1)?.probs;
            Snapshot {
                epoch: 0,
                val_acc: acc(&probs, val),
                test_acc: acc(&probs, test),
                model,
                encoder,
                augmented: AugmentedGraph::unchanged(&g),
            }
        }
    };
    Ok(TrainOutput { best, history })
}

struct EpochOutcome {
    rec: EpochRecord,
    p1: DenseMatrix,
    model_before: PeerModel,
    encoder_before: Option<EdgePredictor>,
}

#[allow(clippy::too_many_arguments)]
fn main_epoch(
    epoch: usize,
    cfg: &TrainConfig,
    g: &Graph,
    x: &NodeFeatures,
    base_adj: &NormalizedAdjacency,
    inp: TrainInputs<'_>,
    unlabeled: &[usize],
    model: &mut PeerModel,
    opt: &mut PeerOptimizers,
    encoder: Option<(&mut EdgePredictor, &mut crate::numerics::AdamState)>,
    rng: &mut SeededRng,
    no_negatives: &NegativeSamples,
    aug: &mut AugmentedGraph,
    aug_adj: &mut NormalizedAdjacency,
) -> Result<EpochOutcome> {
    let train_ids = &inp.masks.train;
    // X·W1 does not depend on the adjacency, so both forwards share it.
    let proj1 = gcn::project(x, &model.gcn1)?;
    let proj2 = gcn::project(x, &model.gcn2)?;

    // Coarse division from losses on the current Â.
    let (coarse, degenerate) = if cfg.use_gmm {
        let c1 = gcn::forward_projected(aug_adj, proj1.clone(), &model.gcn1)?;
        let c2 = gcn::forward_projected(aug_adj, proj2.clone(), &model.gcn2)?;
        let (part, fits) = coarse_divide([&c1.probs, &c2.probs], inp.observed, train_ids, cfg.p_th)?;
        let degenerate = [fits[0].degenerate, fits[1].degenerate];
        // A flat loss profile carries no noise signal: trust every label.
        let part = if degenerate.contains(&true) { CoarsePartition::all_clean(train_ids) } else { part };
        (part, degenerate)
    } else {
        (CoarsePartition::all_clean(train_ids), [false; 2])
    };

    // Re-encode and rebuild Â from scratch.
    let encoder_before = encoder.as_ref().map(|(e, _)| (**e).clone());
    let enc_cache = match &encoder {
        Some((e, _)) => Some(augment::encode(base_adj, x, e)?),
        None => None,
    };
    let mut violations = AugmentViolations::default();
    if let Some(cache) = &enc_cache {
        *aug = augment::augment(g, &cache.logits, &coarse.clean, unlabeled, cfg.tau, cfg.top_k)?;
        violations = check_augmentation(g, aug, &coarse.clean, cfg.tau);
        *aug_adj = aug.normalized(g)?;
    }

    let c1 = gcn::forward_projected(aug_adj, proj1, &model.gcn1)?;
    let c2 = gcn::forward_projected(aug_adj, proj2, &model.gcn2)?;

    let fine = if cfg.use_fine {
        fine_divide(&c1.probs, &c2.probs, &coarse.noisy, unlabeled, inp.observed, cfg.th_pse1, cfg.th_pse2)
    } else {
        FinePartition::trivial(&coarse.noisy, unlabeled)
    };

    let supervision = SupervisionWeights::build(inp.observed, &coarse, &fine, cfg.beta);
    let lambda = if cfg.use_reg { cfg.lambda } else { 0.0 };
    let reg_nodes = cfg.reg_set.nodes(g.num_nodes(), train_ids, &fine);
    let reg_weights = if lambda > 0.0 {
        row_normalized_with_self_loops(&aug.weights)?
    } else {
        crate::numerics::SparseMatrix::zeros(g.num_nodes(), g.num_nodes())
    };
    let drawn;
    let negatives = if enc_cache.is_some() {
        drawn = NegativeSamples::draw(g, cfg.n_neg, rng);
        &drawn
    } else {
        no_negatives
    };
    let ctx = ObjectiveContext {
        graph: g,
        features: x,
        base_adj,
        aug_adj,
        reg_weights: &reg_weights,
        supervision: &supervision,
        label_norm: cfg.label_norm,
        num_labeled: train_ids.len(),
        reg_nodes: &reg_nodes,
        negatives,
        n_neg: cfg.n_neg,
        alpha: cfg.alpha,
        lambda,
    };
    let enc_pair = match (&encoder, &enc_cache) {
        (Some((e, _)), Some(c)) => Some((&**e, c)),
        _ => None,
    };
    let (loss, grads) = evaluate_cached(&ctx, model, [&c1, &c2], enc_pair)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("total loss {loss:?}")));
    }

    let model_before = model.clone();
    model.gcn1.apply_adam(&mut opt.gcn1, &grads.gcn1, "gcn1")?;
    model.gcn2.apply_adam(&mut opt.gcn2, &grads.gcn2, "gcn2")?;
    if let (Some((e, state)), Some(grad)) = (encoder, &grads.encoder) {
        e.encoder.apply_adam(state, grad, "encoder")?;
    }

    let division = inp.clean_truth.map(|t| division_quality(&coarse, train_ids, t));
    let rec = EpochRecord {
        epoch,
        phase: Phase::Main,
        loss,
        partition: Some(PartitionSizes::of(&coarse, &fine)),
        added_edges: aug.added.len(),
        violations,
        gmm_degenerate: degenerate,
        division,
        pseudo_label_acc: (!fine.pseudo.is_empty()).then(|| {
            let hits = fine.pseudo.iter().filter(|&&(i, z)| g.labels()[i] == z).count();
            hits as f64 / fine.pseudo.len() as f64
        }),
        added_same_class: (!aug.added.is_empty()).then(|| {
            let same = aug.added.iter().filter(|e| g.labels()[e.src] == g.labels()[e.dst]).count();
            same as f64 / aug.added.len() as f64
        }),
        val_acc: f64::NAN,
        test_acc: f64::NAN,
    };
    Ok(EpochOutcome { rec, p1: c1.probs, model_before, encoder_before })
}

/// Result of the plain-GCN baseline.
#[derive(Clone, Debug)]
pub struct BaselineOutput {
    pub params: GcnParams,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    /// `(loss, val_acc, test_acc)` per epoch.
    pub history: Vec<(f64, f64, f64)>,
}

/// One GCN trained with mean cross-entropy on `adj` for `cfg.epochs`,
/// initialized like peer 1 of [`train`], with best-validation selection.
pub fn train_baseline(inp: TrainInputs<'_>, adj: Option<&NormalizedAdjacency>, cfg: &TrainConfig) -> Result<BaselineOutput> {
    check_inputs(&inp, cfg)?;
    let g = prepare_graph(inp.graph, cfg);
    let x = NodeFeatures::new(g.features());
    let owned;
    let adj = match adj {
        Some(a) => a,
        None => {
            owned = normalize_adjacency(&g, None)?;
            &owned
        }
    };
    let (s1, _) = peer_seeds(cfg.seed);
    let mut params = GcnParams::init(g.feature_dim(), cfg.hidden, g.num_classes(), s1);
    let mut state = params.adam_state(cfg.adam());
    let mut best: Option<(usize, f64, f64, GcnParams)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let before = params.clone();
        let (loss, cache) = ce_step(&mut params, &mut state, "gcn", adj, &x, inp.observed, &inp.masks.train)
            .map_err(|e| Error::Epoch { epoch, source: Box::new(e) })?;
        let pred = predictions(&cache.probs);
        let val = evaluate(&pred, g.labels(), &inp.masks.val).unwrap_or(f64::NAN);
        let test = evaluate(&pred, g.labels(), &inp.masks.test).unwrap_or(f64::NAN);
        history.push((loss, val, test));
        if val.is_finite() && best.as_ref().is_none_or(|b| val > b.1) {
            best = Some((epoch, val, test, before));
        }
    }
    let (best_epoch, val_acc, test_acc, params) = match best {
        Some(b) => b,
        None => {
            let pred = predictions(&gcn::forward(adj, &x, &params)?.probs);
            let val = evaluate(&pred, g.labels(), &inp.masks.val).unwrap_or(f64::NAN);
            let test = evaluate(&pred, g.labels(), &inp.masks.test).unwrap_or(f64::NAN);
            (cfg.epochs, val, test, params)
        }
    };
    Ok(BaselineOutput { params, best_epoch, val_acc, test_acc, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        let truth = [0, 1, 1, 0];
        assert_eq!(evaluate(&truth, &truth, &[0, 1, 2, 3]).unwrap(), 1.0);
        assert_eq!(evaluate(&[1, 0, 0, 1], &truth, &[0, 1, 2, 3]).unwrap(), 0.0);
        assert_eq!(evaluate(&[0, 1, 1, 1], &truth, &[0, 1, 2, 3]).unwrap(), 0.75);
        assert!(evaluate(&truth, &truth, &[]).is_err());
    }

    #[test]
    fn prediction_ties_go_low() {
        let p = DenseMatrix::from_rows(&[[0.0, 1.0, 0.0], [0.4, 0.2, 0.4]]).unwrap();
        assert_eq!(predictions(&p), vec![1, 0]);
    }
}
