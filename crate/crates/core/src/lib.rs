//! Semi-supervised node classification under sparse and noisy labels.
//!
//! Two peer GCNs split the training labels into clean and noisy sets by
//! fitting a two-component mixture to their per-node losses. Unlabeled nodes
//! are linked to clean nodes through a learned edge predictor. Noisy and
//! unlabeled nodes are then relabeled where both peers agree confidently,
//! and training minimizes a weighted label loss plus a reconstruction loss
//! and a KL consistency regularizer.

pub mod augment;
pub mod coarse;
pub mod error;
pub mod fine;
pub mod gcn;
pub mod graph;
pub mod noise;
pub mod numerics;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
