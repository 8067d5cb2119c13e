//! Statistical and end-to-end behaviour that needs trained models or long chains.

use gsr_core::distortion::NoiseKind;
use gsr_core::evaluation::{evaluate_cell, noisy_instance, run_grid, GridSpec, PipelineId};
use gsr_core::graph::{generate_sbm_graph, SbmConfig};
use gsr_core::nn::{train_dnn, TrainConfig};
use gsr_core::pipeline::PsiBundle;
use gsr_core::random::{rng_from_seed, standard_normal};
use gsr_core::tsne::{silhouette_score, tsne_embed, TsneConfig};
use gsr_core::{Arch, DenseMatrix, GbRbm, Split, Tap};
use rand::Rng;

/// Marginal mean of v for a tiny GB-RBM: enumerate h, weight each component
/// mean b + σ∘(Wh) by p(h) ∝ exp(b_h·h + Σ (μ² − b²)/2σ²).
fn exact_visible_mean(rbm: &GbRbm) -> Vec<f64> {
    let (nv, nh) = (rbm.visible_dim(), rbm.hidden_dim());
    let mut weights = Vec::new();
    let mut means = Vec::new();
    for bits in 0..1usize << nh {
        let h: Vec<f64> = (0..nh).map(|j| ((bits >> j) & 1) as f64).collect();
        let mu: Vec<f64> = (0..nv)
            .map(|i| rbm.visible_bias[i] + rbm.sigma[i] * (0..nh).map(|j| rbm.weights[(i, j)] * h[j]).sum::<f64>())
            .collect();
        let log_w = (0..nh).map(|j| rbm.hidden_bias[j] * h[j]).sum::<f64>()
            + (0..nv)
                .map(|i| (mu[i] * mu[i] - rbm.visible_bias[i].powi(2)) / (2.0 * rbm.sigma[i].powi(2)))
                .sum::<f64>();
        weights.push(log_w.exp());
        means.push(mu);
    }
    let z: f64 = weights.iter().sum();
    (0..nv)
        .map(|i| weights.iter().zip(&means).map(|(w, m)| w * m[i]).sum::<f64>() / z)
        .collect()
}

#[test]
fn gibbs_chain_mean_matches_enumeration() {
    let rbm = GbRbm {
        weights: DenseMatrix::from_rows(&[[1.2, -0.7], [0.4, 0.9]]).unwrap(),
        visible_bias: vec![0.3, -0.5],
        hidden_bias: vec![-0.2, 0.4],
        sigma: vec![1.0, 1.0],
    };
    let want = exact_visible_mean(&rbm);
    let chains = 20_000;
    let mut rng = rng_from_seed(17);
    let mut v = DenseMatrix::from_fn(chains, 2, |_, _| standard_normal(&mut rng));
    for _ in 0..60 {
        let p = rbm.hidden_conditional(&v).unwrap();
        let h = p.map(|x| if rng.random::<f64>() < x { 1.0 } else { 0.0 });
        v = rbm.visible_conditional(&h, true, &mut rng).unwrap();
    }
    let n = chains as f64;
    for i in 0..2 {
        let mean = v.iter_rows().map(|r| r[i]).sum::<f64>() / n;
        let var = v.iter_rows().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z = (mean - want[i]) / (var / n).sqrt();
        assert!(z.abs() < 3.0, "v{i}: chain mean {mean}, exact {}, z = {z}", want[i]);
    }
}

fn sbm(seed: u64) -> gsr_core::Graph {
    generate_sbm_graph(&SbmConfig { seed, ..SbmConfig::default() }).unwrap()
}

#[test]
fn total_corruption_destroys_gcn_accuracy() {
    let g = sbm(7);
    let model = train_dnn(&g, Arch::Gcn, &TrainConfig::default(), None).unwrap();
    let bundle = PsiBundle::identity(model).unwrap();
    for (xk, ak) in [(NoiseKind::Xc, NoiseKind::Ac), (NoiseKind::Xz, NoiseKind::Az)] {
        let mut spec = GridSpec::new(xk, ak, Split::Test, vec![], 1).unwrap();
        spec.levels = vec![0, 100];
        let (grids, _) = run_grid(&bundle, &g, &spec).unwrap();
        let phi = &grids[0];
        assert_eq!(phi.meta.pipeline, PipelineId::Phi);
        let (clean, wrecked) = (phi.get(0, 0).unwrap(), phi.get(100, 100).unwrap());
        assert!(clean - wrecked >= 0.30, "{xk}/{ak}: {clean} -> {wrecked}");
    }
}

#[test]
fn pipelines_in_a_cell_share_one_noisy_instance() {
    let g = generate_sbm_graph(&SbmConfig { num_nodes: 120, seed: 3, ..SbmConfig::default() }).unwrap();
    let cfg = TrainConfig { epochs: 20, hidden_dim: 8, ..TrainConfig::default() };
    let bundle = PsiBundle::identity(train_dnn(&g, Arch::Sage, &cfg, None).unwrap()).unwrap();
    let spec = GridSpec::new(NoiseKind::Xc, NoiseKind::Ac, Split::Test, Tap::ALL.to_vec(), 5).unwrap();
    for (nx, na) in [(0, 0), (30, 70), (100, 10)] {
        let cell = evaluate_cell(&bundle, &g, &spec, nx, na);
        assert!(cell.errors.is_empty(), "{:?}", cell.errors);
        assert_eq!(cell.instance_hash, noisy_instance(&g, &spec, nx, na).unwrap().fingerprint());
        // Identity denoisers on a shared instance cannot disagree with φ.
        let phi = cell.accuracies[0].1;
        assert!(cell.accuracies.iter().all(|(_, a)| *a == phi));
    }
}

#[test]
fn separated_gaussians_keep_their_clusters() {
    // Three 2-D clusters, 50 points each, centres 10σ apart.
    let mut rng = rng_from_seed(8);
    let centres = [(0.0, 0.0), (10.0, 0.0), (5.0, 8.66)];
    let labels: Vec<usize> = (0..150).map(|i| i / 50).collect();
    let z = DenseMatrix::from_fn(150, 2, |r, c| {
        let (x, y) = centres[r / 50];
        (if c == 0 { x } else { y }) + standard_normal(&mut rng)
    });
    let res = tsne_embed(&z, &TsneConfig { iterations: 500, ..TsneConfig::default() }).unwrap();
    assert!(res.coords.is_finite());
    let s = silhouette_score(&res.coords, &labels).unwrap();
    assert!(s > 0.5, "silhouette {s}");
}
