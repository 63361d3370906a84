//! Dense/sparse kernels, the optimizer, the RNG and the gradient oracle.

mod adam;
mod dense;
mod gradcheck;
mod ops;
mod rng;
mod sparse;

pub use adam::{AdamConfig, AdamState, ParamGrad};
pub use dense::{axpy, DenseMatrix};
pub use gradcheck::{finite_diff, relative_error};
pub use ops::{argmax, row_log_softmax, row_softmax, softmax_in_place};
pub use rng::{derive_seed, SeededRng};
pub use sparse::SparseMatrix;

/// Clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// `ln(max(p, LOG_EPS))`.
#[inline]
pub fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_EPS).ln()
}
