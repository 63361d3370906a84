//! Row-wise activations.

use super::dense::DenseMatrix;

/// Row-wise softmax with max subtraction.
pub fn row_softmax(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    if m.cols() == 0 {
        return out;
    }
    for i in 0..m.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

/// Row-wise log-softmax, `x - max - ln Σ exp(x - max)`.
pub fn row_log_softmax(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    if m.cols() == 0 {
        return out;
    }
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v = *v - max - lse;
        }
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_cases() {
        let m = DenseMatrix::from_rows(&[[0.0, 0.0], [1000.0, 0.0], [1f64.ln(), 3f64.ln()]])
            .unwrap();
        let p = row_softmax(&m);
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.get(1, 0), 1.0);
        assert!(p.get(1, 1) < 1e-300 && p.get(1, 1) >= 0.0);
        assert!((p.get(2, 0) - 0.25).abs() < 1e-15);
        assert!((p.get(2, 1) - 0.75).abs() < 1e-15);
        assert!(p.is_finite());
    }

    #[test]
    fn log_softmax_stable() {
        let m = DenseMatrix::from_rows(&[[1000.0, 0.0]]).unwrap();
        let lp = row_log_softmax(&m);
        assert_eq!(lp.get(0, 0), 0.0);
        assert_eq!(lp.get(0, 1), -1000.0);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.0, 0.0, 1.0]), 2);
    }
}
