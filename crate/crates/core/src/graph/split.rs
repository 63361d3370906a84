use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Disjoint train/validation/test node sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitMasks {
    /// Checks disjointness and index range.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in ids {
                if i >= num_nodes {
                    return Err(Error::invalid(format!("{name} id {i} >= {num_nodes}")));
                }
                if seen[i] {
                    return Err(Error::invalid(format!("node {i} appears in two splits")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    /// Nodes outside the training set, ascending.
    pub fn unlabeled(&self, num_nodes: usize) -> Vec<usize> {
        let mut is_train = vec![false; num_nodes];
        self.train.iter().for_each(|&i| is_train[i] = true);
        (0..num_nodes).filter(|&i| !is_train[i]).collect()
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

/// Stratified split: `round(train_frac · |class|)` training nodes per class
/// (at least one), then `round(val_frac · N)` validation nodes drawn from the
/// rest; everything left is test.
pub fn make_split(g: &Graph, train_frac_per_class: f64, val_frac: f64, seed: u64) -> Result<SplitMasks> {
    if !(train_frac_per_class > 0.0 && val_frac > 0.0 && train_frac_per_class + val_frac < 1.0) {
        return Err(Error::invalid(format!(
            "split fractions train={train_frac_per_class}, val={val_frac} must be positive with sum < 1"
        )));
    }
    let n = g.num_nodes();
    let mut by_class: BTreeMap<usize, Vec<usize>> = (0..g.num_classes()).map(|c| (c, Vec::new())).collect();
    for (i, &y) in g.labels().iter().enumerate() {
        by_class.get_mut(&y).unwrap().push(i);
    }
    let mut rng = SeededRng::new(seed);
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for (c, mut members) in by_class {
        if members.is_empty() {
            return Err(Error::invalid(format!("class {c} has no members")));
        }
        rng.shuffle(&mut members);
        let k = ((train_frac_per_class * members.len() as f64).round() as usize)
            .max(1)
            .min(members.len());
        train.extend_from_slice(&members[..k]);
        rest.extend_from_slice(&members[k..]);
    }
    rest.sort_unstable();
    rng.shuffle(&mut rest);
    let n_val = ((val_frac * n as f64).round() as usize).min(rest.len());
    let mut val = rest[..n_val].to_vec();
    let mut test = rest[n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitMasks {
        train,
        val,
        test,
        seed,
    })
}
