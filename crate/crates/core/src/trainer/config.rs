use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::AdamConfig;
use crate::objective::{LabelNorm, RegSet};

/// All training hyperparameters. JSON configs may omit any field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Clean-posterior threshold for co-decision.
    pub p_th: f64,
    /// Minimum decoder weight of an added edge.
    pub tau: f64,
    /// Confidence threshold for relabeling noisy nodes.
    pub th_pse1: f64,
    /// Confidence threshold for pseudo-labeling unlabeled nodes.
    pub th_pse2: f64,
    /// Reconstruction-loss weight; 0 disables augmentation entirely.
    pub alpha: f64,
    /// Label-loss weight of the remaining noisy nodes.
    pub beta: f64,
    /// Consistency-regularizer weight.
    pub lambda: f64,
    pub n_neg: usize,
    pub hidden: usize,
    pub edge_hidden: usize,
    pub edge_embed: usize,
    /// Total epochs, warm-up included.
    pub epochs: usize,
    pub warmup: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub use_gmm: bool,
    pub use_fine: bool,
    pub use_reg: bool,
    pub label_norm: LabelNorm,
    pub reg_set: RegSet,
    /// Optional cap on added edges per unlabeled node.
    pub top_k: Option<usize>,
    /// Scale feature rows to unit L1 norm before training.
    pub normalize_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p_th: 0.5,
            tau: 0.1,
            th_pse1: 0.9,
            th_pse2: 0.9,
            alpha: 0.1,
            beta: 0.1,
            lambda: 0.1,
            n_neg: 50,
            hidden: 128,
            edge_hidden: 64,
            edge_embed: 64,
            epochs: 200,
            warmup: 10,
            lr: 0.01,
            weight_decay: 5e-4,
            seed: 0,
            use_gmm: true,
            use_fine: true,
            use_reg: true,
            label_norm: LabelNorm::Supervised,
            reg_set: RegSet::VlPl,
            top_k: None,
            normalize_features: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        open_unit("p_th", self.p_th)?;
        open_unit("th_pse1", self.th_pse1)?;
        open_unit("th_pse2", self.th_pse2)?;
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau = {} must lie in [0, 1)", self.tau)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda), ("lr", self.lr), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if self.lr == 0.0 {
            return Err(Error::invalid("lr must be positive"));
        }
        if self.warmup > self.epochs {
            return Err(Error::invalid(format!("warmup {} exceeds epochs {}", self.warmup, self.epochs)));
        }
        if self.hidden == 0 || self.edge_hidden == 0 || self.edge_embed == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        if self.alpha > 0.0 && self.n_neg == 0 {
            return Err(Error::invalid("n_neg must be at least 1"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Every division component off and no augmentation: two plain GCNs.
    pub fn plain(&self) -> Self {
        Self {
            use_gmm: false,
            use_fine: false,
            use_reg: false,
            alpha: 0.0,
            ..self.clone()
        }
    }
}
