//! Property tests over randomly generated graphs, matrices and parameters.

use gsr_core::distortion::{
    blank_adjacency, blank_features, corrupt_adjacency, corrupt_features, incident_edges, Percent, Pool,
};
use gsr_core::graph::{mean_aggregator, normalize_adjacency, generate_sbm_graph, SbmConfig};
use gsr_core::n2v::{generate_walks, WalkConfig};
use gsr_core::nn::log_softmax;
use gsr_core::random::logistic;
use gsr_core::tsne::{conditional_affinities, joint_affinities};
use gsr_core::{DenseMatrix, GbRbm, Graph, NodeSet, Scaler, SplitMasks};
use proptest::prelude::*;

fn arb_graph() -> impl Strategy<Value = Graph> {
    (1usize..16, any::<bool>()).prop_flat_map(|(n, directed)| {
        let edges = prop::collection::vec((0..n, 0..n), 0..3 * n);
        let feats = prop::collection::vec(-5.0f64..5.0, n * 3);
        (Just(n), Just(directed), edges, feats).prop_map(|(n, directed, edges, feats)| {
            let split = SplitMasks {
                train: NodeSet::range(0, n / 2),
                val: NodeSet::default(),
                test: NodeSet::range(n / 2, n),
            };
            let x = DenseMatrix::new(n, 3, feats).unwrap();
            Graph::from_edges(n, &edges, directed, x, vec![0; n], 1, split).unwrap()
        })
    })
}

fn arb_sbm() -> impl Strategy<Value = Graph> {
    (30usize..90, any::<u64>()).prop_map(|(n, seed)| {
        generate_sbm_graph(&SbmConfig {
            num_nodes: n,
            num_classes: 3,
            p_in: 0.15,
            p_out: 0.02,
            feature_dim: 5,
            feature_shift: 1.0,
            seed,
        })
        .unwrap()
    })
}

fn bits(m: &DenseMatrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalized_adjacency_is_symmetric(g in arb_graph(), loops in any::<bool>()) {
        let a = normalize_adjacency(&g, loops).to_dense();
        let n = g.num_nodes();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((a[(i, j)] - a[(j, i)]).abs() < 1e-12);
            }
        }
        let nbrs = g.symmetric_neighbors();
        for (v, list) in nbrs.iter().enumerate() {
            if list.is_empty() && !loops {
                prop_assert!(a.row(v).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn mean_aggregator_rows_are_averages(g in arb_graph()) {
        let m = mean_aggregator(&g).to_dense();
        for (v, list) in g.symmetric_neighbors().iter().enumerate() {
            let sum: f64 = m.row(v).iter().sum();
            let want = if list.is_empty() { 0.0 } else { 1.0 };
            prop_assert!((sum - want).abs() < 1e-12);
        }
    }

    #[test]
    fn walks_follow_symmetrized_edges(g in arb_graph(), seed in any::<u64>()) {
        let cfg = WalkConfig { walks_per_node: 2, walk_length: 6, p: 0.5, q: 2.0, seed, ..WalkConfig::default() };
        let walks = generate_walks(&g, &cfg).unwrap();
        let nbrs = g.symmetric_neighbors();
        for w in &walks.walks {
            prop_assert!(!w.is_empty() && w.len() <= 6);
            for pair in w.windows(2) {
                prop_assert!(nbrs[pair[0]].binary_search(&pair[1]).is_ok());
            }
        }
        for &v in &walks.skipped {
            prop_assert!(nbrs[v].is_empty());
        }
        prop_assert_eq!(walks, generate_walks(&g, &cfg).unwrap());
    }

    #[test]
    fn feature_noise_is_exact_local_and_pure(g in arb_sbm(), n in 0u32..=100, seed in any::<u64>()) {
        let target = g.split().test.clone();
        let pct = Percent::new(n).unwrap();
        let total = target.len() * g.feature_dim();
        let mask = target.to_mask(g.num_nodes());
        for blank in [false, true] {
            let f = if blank { blank_features } else { corrupt_features };
            let out = f(g.features(), &target, pct, seed).unwrap();
            prop_assert_eq!(bits(&out), bits(&f(g.features(), &target, pct, seed).unwrap()));
            let changed = out.as_slice().iter().zip(g.features().as_slice()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
            prop_assert_eq!(changed, n as usize * total / 100);
            for r in (0..g.num_nodes()).filter(|&r| !mask[r]) {
                prop_assert_eq!(out.row(r), g.features().row(r));
            }
        }
    }

    #[test]
    fn adjacency_noise_counts_and_locality(g in arb_sbm(), n in 0u32..=100, seed in any::<u64>()) {
        let target = g.split().val.clone();
        let pct = Percent::new(n).unwrap();
        let inc = incident_edges(&g, &target);
        let az = blank_adjacency(&g, &inc, pct, seed).unwrap();
        prop_assert_eq!(g.num_edges() - az.num_edges(), n as usize * inc.len() / 100);
        let ac = corrupt_adjacency(&g, &target, pct, &Pool::TrainOnly.nodes(&g), seed).unwrap();
        prop_assert_eq!(ac.num_edges(), g.num_edges());
        prop_assert_eq!(&ac, &corrupt_adjacency(&g, &target, pct, &Pool::TrainOnly.nodes(&g), seed).unwrap());
        // Edges with no endpoint in the target are never touched.
        let mask = target.to_mask(g.num_nodes());
        let outside = |h: &Graph| {
            let mut e: Vec<_> = h.edges().filter(|&(s, t)| !mask[s] && !mask[t]).collect();
            e.sort_unstable();
            e
        };
        prop_assert_eq!(outside(&az), outside(&g));
        // Rewired edges point into the pool, so outside edges can only grow.
        let before = outside(&g);
        let after = outside(&ac);
        prop_assert!(before.iter().all(|e| after.binary_search(e).is_ok()));
        prop_assert_eq!(ac.features(), g.features());
        prop_assert_eq!(ac.split(), g.split());
    }

    #[test]
    fn percent_count_is_floor(n in 0u32..=100, total in 0usize..1_000_000) {
        let want = (n as f64 / 100.0 * total as f64 + 1e-9).floor() as usize;
        prop_assert_eq!(Percent::new(n).unwrap().count_of(total), want);
    }

    #[test]
    fn log_softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..8, scale in 0.1f64..500.0, seed in any::<u64>()) {
        let mut s = seed;
        let z = DenseMatrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 2.0 * scale
        });
        let lp = log_softmax(&z);
        for r in lp.iter_rows() {
            prop_assert!((r.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scaler_round_trip(data in prop::collection::vec(-1e3f64..1e3, 12..60)) {
        let rows = data.len() / 4;
        let z = DenseMatrix::new(rows, 4, data[..rows * 4].to_vec()).unwrap();
        let s = Scaler::fit(&z);
        let back = s.inverse_transform(&s.transform(&z).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(z.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        prop_assert!(s.std.iter().all(|&v| v >= 1e-6));
    }

    #[test]
    fn logistic_is_finite_and_bounded(x in -1e4f64..1e4) {
        let y = logistic(x);
        prop_assert!(y.is_finite() && (0.0..=1.0).contains(&y));
        prop_assert!((y + logistic(-x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rbm_conditionals_are_well_formed(seed in any::<u64>(), v in prop::collection::vec(-3.0f64..3.0, 3)) {
        let rbm = GbRbm::init(3, 4, seed);
        let h = rbm.hidden_conditional(&DenseMatrix::new(1, 3, v.clone()).unwrap()).unwrap();
        prop_assert!(h.as_slice().iter().all(|&p| p > 0.0 && p < 1.0));
        let mut rng = gsr_core::random::rng_from_seed(seed);
        let mu = rbm.visible_conditional(&h, false, &mut rng).unwrap();
        prop_assert_eq!(mu, rbm.visible_mean(&h).unwrap());
        // Scaling v, b_v and σ together leaves the quadratic energy term fixed.
        let mut scaled = GbRbm::zeros(3, 4);
        scaled.sigma = vec![2.0; 3];
        let plain = GbRbm::zeros(3, 4);
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let e1 = plain.energy(&v, &[0.0; 4]).unwrap();
        let e2 = scaled.energy(&v2, &[0.0; 4]).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn tsne_affinities_hit_perplexity(n in 19usize..40, perp in 2.0f64..6.0, seed in any::<u64>()) {
        let mut rng = gsr_core::random::rng_from_seed(seed);
        let z = DenseMatrix::from_fn(n, 3, |_, _| gsr_core::random::standard_normal(&mut rng));
        let (cond, _) = conditional_affinities(&z, perp).unwrap();
        for (i, row) in cond.iter_rows().enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(row[i], 0.0);
            let entropy: f64 = -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>();
            prop_assert!((entropy.exp2() - perp).abs() < 1e-3, "row {} perplexity {}", i, entropy.exp2());
        }
        let p = joint_affinities(&cond);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((p[(i, j)] - p[(j, i)]).abs() < 1e-15);
            }
        }
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
