#![allow(clippy::needless_range_loop)]

mod common;

use cfgd::gcn::{self, cross_entropy_grad, GcnParams, NodeFeatures};
use cfgd::graph::{load_graph, make_split, normalize_adjacency, save_graph, Graph};
use cfgd::numerics::{finite_diff, relative_error, DenseMatrix, SeededRng, SparseMatrix};
use common::{permute_graph, random_graph};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_adjacency_is_symmetric_with_bounded_rows(
        n in 1usize..25, p in 0.0f64..0.6, seed in any::<u64>(), overlay_w in prop::collection::vec(0.0f64..1.0, 5)
    ) {
        let g = random_graph(n, 2, 2, p, seed);
        let max_deg = (0..n).map(|i| g.degree(i)).max().unwrap_or(0) as f64;
        let a = normalize_adjacency(&g, None).unwrap();
        prop_assert!(a.matrix().is_symmetric());
        for s in a.matrix().row_sums() {
            prop_assert!(s > 0.0 && s <= 1.0 + max_deg, "row sum {} with max degree {}", s, max_deg);
        }
        prop_assert!(a.matrix().values().iter().all(|v| v.is_finite() && *v >= 0.0));

        // Weighted overlay on non-edges: same guarantees with weighted degrees.
        let mut rng = SeededRng::new(seed ^ 1);
        let mut trip = Vec::new();
        for &w in &overlay_w {
            let (i, j) = (rng.below(n), rng.below(n));
            if i != j && !g.has_edge(i, j) && trip.iter().all(|&(a, b, _)| (a, b) != (i, j) && (a, b) != (j, i)) {
                trip.push((i, j, w));
                trip.push((j, i, w));
            }
        }
        let overlay = SparseMatrix::from_triplets(n, n, trip).unwrap();
        let a = normalize_adjacency(&g, Some(&overlay)).unwrap();
        prop_assert!(a.matrix().is_symmetric());
        let max_wdeg = overlay.row_sums().iter().enumerate().map(|(i, w)| g.degree(i) as f64 + w).fold(0.0, f64::max);
        for s in a.matrix().row_sums() {
            prop_assert!(s > 0.0 && s <= 1.0 + max_wdeg + 1e-12);
        }
    }

    #[test]
    fn splits_are_disjoint_and_stratified(
        n_per in 2usize..40, c in 1usize..6, train in 0.01f64..0.4, val in 0.01f64..0.4, seed in any::<u64>()
    ) {
        prop_assume!(train + val < 1.0);
        let n = n_per * c;
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let g = Graph::new(c, [], DenseMatrix::zeros(n, 1), labels.clone()).unwrap();
        let s = make_split(&g, train, val, seed).unwrap();
        s.validate(n).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        for class in 0..c {
            prop_assert!(s.train.iter().any(|&i| labels[i] == class));
        }
        prop_assert_eq!(s.unlabeled(n).len(), n - s.train.len());
    }

    #[test]
    fn forward_is_permutation_equivariant(n in 2usize..15, seed in any::<u64>()) {
        let g = random_graph(n, 3, 3, 0.3, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        SeededRng::new(seed ^ 7).shuffle(&mut perm);
        let h = permute_graph(&g, &perm);
        let p = GcnParams::init(3, 4, 3, seed ^ 9);
        let out_g = gcn::forward(&normalize_adjacency(&g, None).unwrap(), &NodeFeatures::new(g.features()), &p).unwrap();
        let out_h = gcn::forward(&normalize_adjacency(&h, None).unwrap(), &NodeFeatures::new(h.features()), &p).unwrap();
        for i in 0..n {
            // Neighbor sums may be taken in another order, so allow rounding.
            for (a, b) in out_g.logits.row(i).iter().zip(out_h.logits.row(perm[i])) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn save_load_roundtrip(n in 1usize..12, p in 0.0f64..0.7, seed in any::<u64>()) {
        let g = random_graph(n, 3, 4, p, seed);
        let dir = tempfile::tempdir().unwrap();
        save_graph(&g, dir.path()).unwrap();
        let back = load_graph(dir.path()).unwrap();
        prop_assert_eq!(&back, &g);
        let again = tempfile::tempdir().unwrap();
        save_graph(&back, again.path()).unwrap();
        for f in ["edges.csv", "features.csv", "labels.csv"] {
            prop_assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
        }
    }
}

/// Cross-entropy plus a quadratic in P, so the backward pass is checked on
/// more than one loss that consumes the softmax output.
fn check_backward(seed: u64) {
    let mut rng = SeededRng::new(seed);
    let n = 3 + rng.below(6);
    let g = random_graph(n, 4, 3, 0.4, seed);
    let adj = normalize_adjacency(&g, None).unwrap();
    let x = NodeFeatures::new(g.features());
    let p = GcnParams::init(4, 5, 3, seed.wrapping_add(1));
    let ids: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
    let targets = DenseMatrix::from_fn(n, 3, |_, _| rng.uniform());
    let loss = |q: &GcnParams| {
        let c = gcn::forward(&adj, &x, q).unwrap();
        let (ce, _) = cross_entropy_grad(&c.probs, g.labels(), &ids).unwrap();
        let quad: f64 = c.probs.as_slice().iter().zip(targets.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        ce + quad
    };
    let c = gcn::forward(&adj, &x, &p).unwrap();
    let (_, mut gl) = cross_entropy_grad(&c.probs, g.labels(), &ids).unwrap();
    // d quad / d logits through the softmax Jacobian.
    for i in 0..n {
        let pr = c.probs.row(i);
        let dp: Vec<f64> = pr.iter().zip(targets.row(i)).map(|(a, b)| 2.0 * (a - b)).collect();
        let inner: f64 = dp.iter().zip(pr).map(|(a, b)| a * b).sum();
        for k in 0..3 {
            let v = gl.get(i, k) + pr[k] * (dp[k] - inner);
            gl.set(i, k, v);
        }
    }
    let analytic = gcn::backward(&c, &adj, &x, &p, &gl).unwrap().flatten();
    let numeric = finite_diff(|f| loss(&p.unflatten_like(f).unwrap()), &p.flatten(), 1e-5);
    let err = relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "seed {seed}: relative error {err}");
}

#[test]
fn backward_matches_finite_differences_over_20_seeds() {
    for seed in 0..20 {
        check_backward(seed);
    }
}
