mod common;

use cfgd::augment::{augment, check_augmentation, reconstruction_loss, AddedEdge, AugmentedGraph, EdgePredictor, NegativeSamples};
use cfgd::coarse::CoarsePartition;
use cfgd::fine::FinePartition;
use cfgd::gcn::{self, GcnParams, NodeFeatures, PeerModel};
use cfgd::graph::{normalize_adjacency, row_normalized_with_self_loops, Graph};
use cfgd::numerics::{finite_diff, relative_error, DenseMatrix, SeededRng};
use cfgd::objective::{consistency_loss, evaluate, label_loss, LabelNorm, ObjectiveContext, SupervisionWeights};
use common::{random_graph, random_probs};
use proptest::prelude::*;

const H: f64 = 1e-5;

/// A 6-node instance with every partition cell populated: nodes 0–3 are
/// labeled (0, 1 clean; 2 relabeled; 3 remaining), 4 is pseudo-labeled and
/// 5 is unlabeled. Added edges run from 4 and 5 to the clean nodes.
struct Instance {
    g: Graph,
    x: NodeFeatures,
    base: cfgd::graph::NormalizedAdjacency,
    aug: cfgd::graph::NormalizedAdjacency,
    reg_weights: cfgd::numerics::SparseMatrix,
    sup: SupervisionWeights,
    negatives: NegativeSamples,
    model: PeerModel,
    encoder: EdgePredictor,
}

fn instance(seed: u64) -> Instance {
    let mut rng = SeededRng::new(seed);
    let mut edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)];
    for _ in 0..3 {
        let (a, b) = (rng.below(6), rng.below(6));
        edges.push((a, b));
    }
    let features = DenseMatrix::from_fn(6, 4, |_, _| rng.gaussian());
    let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
    let g = Graph::new(3, edges, features, labels.clone()).unwrap();
    let added: Vec<AddedEdge> = [(4, 0), (4, 1), (5, 0), (5, 1)]
        .into_iter()
        .filter(|&(s, d)| !g.has_edge(s, d))
        .map(|(src, dst)| AddedEdge { src, dst, weight: rng.uniform_range(0.2, 1.0) })
        .collect();
    let augmented = AugmentedGraph::from_added(&g, added).unwrap();
    let coarse = CoarsePartition { clean: vec![0, 1], noisy: vec![2, 3], clean_probs: [vec![], vec![]] };
    let fine = FinePartition {
        confident: vec![(2, (labels[2] + 1) % 3)],
        remaining: vec![3],
        pseudo: vec![(4, 1)],
        unlabeled: vec![5],
    };
    let sup = SupervisionWeights::build(&labels, &coarse, &fine, 0.3);
    let negatives = NegativeSamples::draw(&g, 3, &mut rng);
    Instance {
        x: NodeFeatures::new(g.features()),
        base: normalize_adjacency(&g, None).unwrap(),
        aug: augmented.normalized(&g).unwrap(),
        reg_weights: row_normalized_with_self_loops(&augmented.weights).unwrap(),
        sup,
        negatives,
        model: PeerModel::init(4, 5, 3, seed ^ 11, seed ^ 12),
        encoder: EdgePredictor::init(4, 5, 3, seed ^ 13),
        g,
    }
}

fn ctx<'a>(inst: &'a Instance, reg_nodes: &'a [usize], norm: LabelNorm) -> ObjectiveContext<'a> {
    ObjectiveContext {
        graph: &inst.g,
        features: &inst.x,
        base_adj: &inst.base,
        aug_adj: &inst.aug,
        reg_weights: &inst.reg_weights,
        supervision: &inst.sup,
        label_norm: norm,
        num_labeled: 4,
        reg_nodes,
        negatives: &inst.negatives,
        n_neg: 3,
        alpha: 0.7,
        lambda: 0.5,
    }
}

/// Checks the gradient of `l_total` for one parameter group.
fn check_group(
    c: &ObjectiveContext<'_>,
    analytic: &GcnParams,
    current: &GcnParams,
    rebuild: impl Fn(GcnParams) -> (PeerModel, EdgePredictor),
) -> f64 {
    let numeric = finite_diff(
        |flat| {
            let (m, e) = rebuild(current.unflatten_like(flat).unwrap());
            evaluate(c, &m, Some(&e)).unwrap().0.l_total
        },
        &current.flatten(),
        H,
    );
    relative_error(&analytic.flatten(), &numeric)
}

fn total_gradient_error(seed: u64, norm: LabelNorm) -> [f64; 3] {
    let inst = instance(seed);
    let reg_nodes = [0, 1, 2, 3, 4];
    let c = ctx(&inst, &reg_nodes, norm);
    let (_, grads) = evaluate(&c, &inst.model, Some(&inst.encoder)).unwrap();
    let e1 = check_group(&c, &grads.gcn1, &inst.model.gcn1, |p| {
        (PeerModel { gcn1: p, gcn2: inst.model.gcn2.clone() }, inst.encoder.clone())
    });
    let e2 = check_group(&c, &grads.gcn2, &inst.model.gcn2, |p| {
        (PeerModel { gcn1: inst.model.gcn1.clone(), gcn2: p }, inst.encoder.clone())
    });
    let e3 = check_group(&c, grads.encoder.as_ref().unwrap(), &inst.encoder.encoder, |p| {
        (inst.model.clone(), EdgePredictor { encoder: p })
    });
    [e1, e2, e3]
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    for seed in 0..20 {
        for norm in [LabelNorm::Supervised, LabelNorm::Vl] {
            let errs = total_gradient_error(seed, norm);
            for (name, e) in ["gcn1", "gcn2", "encoder"].iter().zip(errs) {
                assert!(e < 1e-4, "seed {seed} {norm}: {name} relative error {e}");
            }
        }
    }
}

#[test]
fn reconstruction_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let g = random_graph(8, 3, 2, 0.4, seed);
        let mut rng = SeededRng::new(seed);
        let negatives = NegativeSamples::draw(&g, 4, &mut rng);
        let z = DenseMatrix::from_fn(8, 5, |_, _| rng.gaussian());
        let (_, grad) = reconstruction_loss(&z, &g, &negatives, 4).unwrap();
        let numeric = finite_diff(
            |flat| reconstruction_loss(&DenseMatrix::from_vec(8, 5, flat.to_vec()).unwrap(), &g, &negatives, 4).unwrap().0,
            z.as_slice(),
            H,
        );
        let err = relative_error(grad.as_slice(), &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

fn weights_strategy() -> impl Strategy<Value = (usize, usize, u64, Vec<(f64, usize)>)> {
    (1usize..15, 2usize..5).prop_flat_map(|(n, c)| {
        let w = prop::collection::vec((prop_oneof![Just(0.0), Just(1.0), 0.0f64..1.0], 0..c), n);
        (Just(n), Just(c), any::<u64>(), w)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regularizer_is_non_negative(n in 1usize..15, c in 2usize..5, temp in 0.0f64..8.0, p in 0.0f64..0.6, seed in any::<u64>()) {
        let g = random_graph(n, 2, c, p, seed);
        let mut rng = SeededRng::new(seed);
        let (p1, p2) = (random_probs(n, c, temp, &mut rng), random_probs(n, c, temp, &mut rng));
        let rw = row_normalized_with_self_loops(g.adjacency()).unwrap();
        let nodes: Vec<usize> = (0..n).filter(|_| rng.bernoulli(0.6)).collect();
        let t = consistency_loss(&p1, &p2, &rw, &nodes).unwrap();
        prop_assert!(t.inter >= 0.0 && t.intra >= 0.0);
        let same = consistency_loss(&p1, &p1, &rw, &nodes).unwrap();
        prop_assert!(same.inter.abs() < 1e-12);
    }

    #[test]
    fn label_loss_is_peer_symmetric((n, c, seed, w) in weights_strategy(), temp in 0.1f64..5.0) {
        let mut rng = SeededRng::new(seed);
        let (p1, p2) = (random_probs(n, c, temp, &mut rng), random_probs(n, c, temp, &mut rng));
        let sup = SupervisionWeights { weight: w.iter().map(|x| x.0).collect(), target: w.iter().map(|x| x.1).collect() };
        for norm in [LabelNorm::Supervised, LabelNorm::Vl] {
            let (a, g1, g2) = label_loss(&p1, &p2, &sup, norm, n).unwrap();
            let (b, h1, h2) = label_loss(&p2, &p1, &sup, norm, n).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            prop_assert!(g1.max_abs_diff(&h2) < 1e-15 && g2.max_abs_diff(&h1) < 1e-15);
        }
    }

    #[test]
    fn zero_beta_ignores_remaining_nodes(n in 4usize..15, c in 2usize..5, seed in any::<u64>(), flips in prop::collection::vec(0usize..5, 4..15)) {
        let mut rng = SeededRng::new(seed);
        let (p1, p2) = (random_probs(n, c, 2.0, &mut rng), random_probs(n, c, 2.0, &mut rng));
        let observed: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let coarse = CoarsePartition { clean: vec![0, 1], noisy: vec![2, 3], clean_probs: [vec![], vec![]] };
        let fine = FinePartition { confident: vec![], remaining: vec![2, 3], pseudo: vec![], unlabeled: (4..n).collect() };
        let base = SupervisionWeights::build(&observed, &coarse, &fine, 0.0);
        let mut relabeled = observed.clone();
        relabeled[2] = flips[0] % c;
        relabeled[3] = flips[1] % c;
        let other = SupervisionWeights::build(&relabeled, &coarse, &fine, 0.0);
        let (a, g1, _) = label_loss(&p1, &p2, &base, LabelNorm::Supervised, 4).unwrap();
        let (b, h1, _) = label_loss(&p1, &p2, &other, LabelNorm::Supervised, 4).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(g1.as_slice(), h1.as_slice());
        for i in [2, 3] {
            prop_assert!(g1.row(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn augment_is_deterministic_and_valid(
        n in 2usize..20, p in 0.0f64..0.5, tau in 0.0f64..0.9, k in prop::option::of(1usize..4), seed in any::<u64>()
    ) {
        let g = random_graph(n, 3, 2, p, seed);
        let mut rng = SeededRng::new(seed ^ 3);
        let z = DenseMatrix::from_fn(n, 4, |_, _| rng.gaussian());
        let mut clean = Vec::new();
        let mut unlabeled = Vec::new();
        for i in 0..n {
            if rng.bernoulli(0.4) { clean.push(i) } else { unlabeled.push(i) }
        }
        let a = augment(&g, &z, &clean, &unlabeled, tau, k).unwrap();
        let b = augment(&g, &z, &clean, &unlabeled, tau, k).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(check_augmentation(&g, &a, &clean, tau).total(), 0);
        for e in &a.added {
            prop_assert!(unlabeled.contains(&e.src));
        }
        if let Some(k) = k {
            for &u in &unlabeled {
                prop_assert!(a.added.iter().filter(|e| e.src == u).count() <= k);
            }
        }
        // Original edges keep weight 1; Â ⊇ A.
        for (i, j, w) in g.adjacency().iter() {
            prop_assert_eq!(a.weights.get(i, j), w);
        }
        let _ = gcn::forward(&a.normalized(&g).unwrap(), &NodeFeatures::new(g.features()), &GcnParams::init(3, 2, 2, 0)).unwrap();
    }
}
