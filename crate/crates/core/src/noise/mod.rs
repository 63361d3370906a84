//! Label-noise injection, synthetic graphs, division metrics and the
//! link-strategy experiment.

mod link;

pub use link::{link_strategy_experiment, top_k_similar_labeled, LinkResult, LinkStrategy};

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coarse::CoarsePartition;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{DenseMatrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Uniform,
    Pair,
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "pair" => Ok(Self::Pair),
            _ => Err(Error::invalid(format!("noise kind `{s}`, expected uniform or pair"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Pair => "pair",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub pair_map: Option<Vec<usize>>,
}

impl NoiseSpec {
    pub fn apply(&self, labels: &[usize], train_ids: &[usize], num_classes: usize) -> Result<NoiseRecord> {
        match self.kind {
            NoiseKind::Uniform => inject_uniform(labels, train_ids, self.rate, num_classes, self.seed),
            NoiseKind::Pair => {
                let map = match &self.pair_map {
                    Some(m) => m.clone(),
                    None => default_pair_map(num_classes),
                };
                inject_pair(labels, train_ids, self.rate, &map, self.seed)
            }
        }
    }
}

/// Corrupted labels. `observed_labels` covers every node; only `flipped`
/// (a subset of the training ids) differs from the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub pair_map: Option<Vec<usize>>,
    pub observed_labels: Vec<usize>,
    pub flipped: Vec<usize>,
}

impl NoiseRecord {
    /// Per-node flag: observed label is the true one.
    pub fn clean_flags(&self) -> Vec<bool> {
        let mut flags = vec![true; self.observed_labels.len()];
        self.flipped.iter().for_each(|&i| flags[i] = false);
        flags
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}

fn check_rate(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise rate {p} outside [0, 1]")))
    }
}

/// `c ↦ (c + 1) mod C`.
pub fn default_pair_map(num_classes: usize) -> Vec<usize> {
    (0..num_classes).map(|c| (c + 1) % num_classes).collect()
}

/// Each training label flips with probability `p` to a uniformly drawn other class.
pub fn inject_uniform(labels: &[usize], train_ids: &[usize], p: f64, num_classes: usize, seed: u64) -> Result<NoiseRecord> {
    check_rate(p)?;
    if num_classes < 2 {
        return Err(Error::invalid("uniform noise needs at least 2 classes"));
    }
    let mut rng = SeededRng::new(seed);
    let mut observed = labels.to_vec();
    let mut flipped = Vec::new();
    for &i in train_ids {
        if rng.bernoulli(p) {
            let mut c = rng.below(num_classes - 1);
            if c >= labels[i] {
                c += 1;
            }
            observed[i] = c;
            flipped.push(i);
        }
    }
    flipped.sort_unstable();
    Ok(NoiseRecord {
        kind: NoiseKind::Uniform,
        rate: p,
        seed,
        pair_map: None,
        observed_labels: observed,
        flipped,
    })
}

/// Each training label flips with probability `p` to `pair_map[y]`.
pub fn inject_pair(labels: &[usize], train_ids: &[usize], p: f64, pair_map: &[usize], seed: u64) -> Result<NoiseRecord> {
    check_rate(p)?;
    let c = pair_map.len();
    let mut seen = vec![false; c];
    for (k, &t) in pair_map.iter().enumerate() {
        if t >= c || seen[t] {
            return Err(Error::invalid("pair map is not a permutation"));
        }
        if t == k {
            return Err(Error::invalid(format!("pair map fixes class {k}")));
        }
        seen[t] = true;
    }
    let mut rng = SeededRng::new(seed);
    let mut observed = labels.to_vec();
    let mut flipped = Vec::new();
    for &i in train_ids {
        if labels[i] >= c {
            return Err(Error::invalid(format!("label {} outside pair map", labels[i])));
        }
        if rng.bernoulli(p) {
            observed[i] = pair_map[labels[i]];
            flipped.push(i);
        }
    }
    flipped.sort_unstable();
    Ok(NoiseRecord {
        kind: NoiseKind::Pair,
        rate: p,
        seed,
        pair_map: Some(pair_map.to_vec()),
        observed_labels: observed,
        flipped,
    })
}

/// Stochastic block model with Gaussian features.
///
/// Node `i` belongs to class `i / n_per_class`. Class `c` has feature mean
/// `(sep/√2)·e_c`, so any two class means are `sep` apart; noise is unit
/// isotropic.
pub fn generate_sbm(
    n_per_class: usize,
    num_classes: usize,
    p_in: f64,
    p_out: f64,
    feat_dim: usize,
    feat_separation: f64,
    seed: u64,
) -> Result<Graph> {
    if n_per_class == 0 || num_classes == 0 {
        return Err(Error::invalid("SBM needs at least one class and one node per class"));
    }
    if feat_dim < num_classes {
        return Err(Error::invalid(format!("feature dim {feat_dim} below class count {num_classes}")));
    }
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("edge probability {p} outside [0, 1]")));
        }
    }
    let n = n_per_class * num_classes;
    let labels: Vec<usize> = (0..n).map(|i| i / n_per_class).collect();
    let mut rng = SeededRng::new(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    let shift = feat_separation / std::f64::consts::SQRT_2;
    let features = DenseMatrix::from_fn(n, feat_dim, |i, k| {
        let mean = if k == labels[i] { shift } else { 0.0 };
        mean + rng.gaussian()
    });
    Graph::new(num_classes, edges, features, labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivisionQuality {
    /// `|V_cl ∩ clean| / |V_cl|`, 1 when `V_cl` is empty.
    pub precision: f64,
    /// `|V_cl ∩ clean| / |clean|`, 1 when no training node is clean.
    pub recall: f64,
}

/// Quality of `V_cl` against the truly clean training nodes.
pub fn division_quality(part: &CoarsePartition, train_ids: &[usize], clean_flags: &[bool]) -> DivisionQuality {
    let hits = part.clean.iter().filter(|&&i| clean_flags[i]).count();
    let clean_total = train_ids.iter().filter(|&&i| clean_flags[i]).count();
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    DivisionQuality {
        precision: ratio(hits, part.clean.len()),
        recall: ratio(hits, clean_total),
    }
}
