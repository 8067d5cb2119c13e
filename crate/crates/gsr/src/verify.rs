//! Self-check suites behind `gsr verify`. Each suite is small enough to run
//! in seconds and reports a one-line detail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use gsr_core::distortion::{blank_adjacency, corrupt_adjacency, incident_edges, NoiseKind, Percent};
use gsr_core::distortion::{blank_features, corrupt_features};
use gsr_core::evaluation::{accuracy, run_grid, GridSpec};
use gsr_core::graph::{generate_sbm_graph, SbmConfig};
use gsr_core::nn::{
    log_softmax_nll, nll_logit_grad, train_dnn, Dropout, DropoutMask, Mode, Propagation, TrainConfig,
};
use gsr_core::pipeline::{forward_phi, run_psi, PsiBundle};
use gsr_core::random::{logistic, rng_from_seed};
use gsr_core::tsne::{conditional_affinities, joint_affinities, kl_divergence, tsne_embed, tsne_gradient, TsneConfig};
use gsr_core::{Arch, DenseMatrix, DnnModel, GbRbm, Graph, Split, Tap};
use rand::Rng;
use serde::Serialize;

use crate::formats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn() -> Result<String, String>;

pub const SUITES: [(&str, Check); 7] = [
    ("gradients", gradients),
    ("rbm-conditionals", rbm_conditionals),
    ("noise-counts", noise_counts),
    ("pipeline-identity", pipeline_identity),
    ("grid-contracts", grid_contracts),
    ("tsne", tsne_descent),
    ("checkpoints", checkpoints),
];

pub fn run_suite(name: &'static str, check: Check) -> SuiteResult {
    let t = Instant::now();
    let (passed, detail) = match catch_unwind(AssertUnwindSafe(check)) {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    SuiteResult {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

pub fn run_all() -> Vec<SuiteResult> {
    SUITES.iter().map(|&(n, c)| run_suite(n, c)).collect()
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn small_sbm(n: usize, seed: u64) -> Graph {
    generate_sbm_graph(&SbmConfig {
        num_nodes: n,
        num_classes: 3,
        p_in: 0.2,
        p_out: 0.02,
        feature_dim: 6,
        feature_shift: 1.0,
        seed,
    })
    .expect("valid SBM config")
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-7)
}

/// Backprop of every architecture and the t-SNE gradient against central differences.
fn gradients() -> Result<String, String> {
    let g = small_sbm(12, 3);
    let mut worst: f64 = 0.0;
    for arch in Arch::ALL {
        let cfg = TrainConfig {
            hidden_dim: 5,
            dropout_p: 0.2,
            seed: 4,
            ..TrainConfig::default()
        };
        let mut m = DnnModel::init(arch, g.feature_dim(), 5, 3, cfg);
        let mut rng = rng_from_seed(9);
        for (_, p) in m.named_params_mut() {
            p.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let prop = Propagation::for_graph(arch, &g);
        let masks = [DropoutMask::sample(60, 0.2, &mut rng), DropoutMask::sample(60, 0.2, &mut rng)];
        let z0 = g.features().clone();
        let loss = |m: &DnnModel| -> f64 {
            let t = m
                .forward_from(&prop, Tap::Z0, z0.clone(), Mode::Train, Dropout::Fixed(&masks))
                .expect("forward");
            log_softmax_nll(&t.taps[3], g.labels(), &g.split().train).expect("loss").0
        };
        let trace = m
            .forward_from(&prop, Tap::Z0, z0.clone(), Mode::Train, Dropout::Fixed(&masks))
            .map_err(e2s)?;
        let d = nll_logit_grad(&trace.log_probs, g.labels(), &g.split().train);
        let grads = m.backward(&prop, &trace, &d).map_err(e2s)?;
        for (pi, (name, a)) in grads.named_slices().into_iter().enumerate() {
            let mut num = vec![0.0; a.len()];
            for (k, slot) in num.iter_mut().enumerate() {
                let mut plus = m.clone();
                plus.named_params_mut()[pi].1[k] += 1e-4;
                let mut minus = m.clone();
                minus.named_params_mut()[pi].1[k] -= 1e-4;
                *slot = (loss(&plus) - loss(&minus)) / 2e-4;
            }
            let r = rel_err(a, &num);
            if r > 1e-3 {
                return Err(format!("{arch} {name}: relative error {r:.2e}"));
            }
            worst = worst.max(r);
        }
    }
    let mut rng = rng_from_seed(5);
    let z = DenseMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
    let p = joint_affinities(&conditional_affinities(&z, 3.0).map_err(e2s)?.0);
    let y = DenseMatrix::from_fn(10, 2, |_, _| rng.random_range(-1.0..1.0));
    let a = tsne_gradient(&p, &y);
    let mut num = vec![0.0; 20];
    for (k, slot) in num.iter_mut().enumerate() {
        let (mut yp, mut ym) = (y.clone(), y.clone());
        yp.as_mut_slice()[k] += 1e-4;
        ym.as_mut_slice()[k] -= 1e-4;
        *slot = (kl_divergence(&p, &yp) - kl_divergence(&p, &ym)) / 2e-4;
    }
    let r = rel_err(a.as_slice(), &num);
    if r > 1e-3 {
        return Err(format!("t-SNE gradient relative error {r:.2e}"));
    }
    Ok(format!("max relative error {:.2e}", worst.max(r)))
}

/// `P(h=1|v)` against a direct evaluation of the logistic form.
fn rbm_conditionals() -> Result<String, String> {
    let mut rbm = GbRbm::init(4, 3, 2);
    let mut rng = rng_from_seed(1);
    rbm.hidden_bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    rbm.sigma = vec![1.0, 0.5, 2.0, 1.5];
    let v = DenseMatrix::from_fn(5, 4, |_, _| rng.random_range(-2.0..2.0));
    let h = rbm.hidden_conditional(&v).map_err(e2s)?;
    for r in 0..5 {
        for j in 0..3 {
            let pre: f64 = rbm.hidden_bias[j]
                + (0..4).map(|i| v[(r, i)] / rbm.sigma[i] * rbm.weights[(i, j)]).sum::<f64>();
            let want = 1.0 / (1.0 + (-pre).exp());
            if (h[(r, j)] - want).abs() > 1e-12 || (logistic(pre) - want).abs() > 1e-12 {
                return Err(format!("P(h{j}=1|v{r}) = {} expected {want}", h[(r, j)]));
            }
        }
    }
    Ok("15 hidden probabilities exact to 1e-12".into())
}

/// Every operator modifies exactly `floor(n·total/100)` items at every level.
fn noise_counts() -> Result<String, String> {
    let g = small_sbm(60, 8);
    let target = g.split().test.clone();
    let entries = target.len() * g.feature_dim();
    let edges = incident_edges(&g, &target);
    for n in Percent::LEVELS {
        let pct = Percent::new(n).map_err(e2s)?;
        for kind in [NoiseKind::Xc, NoiseKind::Xz] {
            let x = match kind {
                NoiseKind::Xc => corrupt_features(g.features(), &target, pct, n as u64),
                _ => blank_features(g.features(), &target, pct, n as u64),
            }
            .map_err(e2s)?;
            let changed = x.as_slice().iter().zip(g.features().as_slice()).filter(|(a, b)| a != b).count();
            if changed != pct.count_of(entries) {
                return Err(format!("{kind} at {n}%: {changed} entries changed"));
            }
        }
        let az = blank_adjacency(&g, &edges, pct, 1).map_err(e2s)?;
        if g.num_edges() - az.num_edges() != pct.count_of(edges.len()) {
            return Err(format!("Az at {n}%: wrong deletion count"));
        }
        let ac = corrupt_adjacency(&g, &target, pct, &g.split().train, 1).map_err(e2s)?;
        if ac.num_edges() != g.num_edges() || ac.split().train != g.split().train {
            return Err(format!("Ac at {n}%: edge count or split changed"));
        }
        if n == 0 && (az != g || ac != g) {
            return Err("0% is not the identity".into());
        }
    }
    Ok(format!("4 operators × 11 levels on {entries} entries / {} edges", edges.len()))
}

/// ψᵢ with an identity denoiser reproduces φ for every architecture and tap.
fn pipeline_identity() -> Result<String, String> {
    let g = small_sbm(40, 2);
    for arch in Arch::ALL {
        // node2vec input is [X | E]; a constant 2-column E suffices here.
        let extra = if arch == Arch::N2v { 2 } else { 0 };
        let mut m = DnnModel::init(arch, g.feature_dim() + extra, 6, 3, TrainConfig::default());
        if arch == Arch::N2v {
            m.embeddings = Some(DenseMatrix::filled(40, extra, 0.25));
        }
        let phi = forward_phi(&m, &g).map_err(e2s)?.predictions;
        let bundle = PsiBundle::identity(m).map_err(e2s)?;
        for tap in Tap::ALL {
            if run_psi(&bundle, &g, tap).map_err(e2s)?.predictions != phi {
                return Err(format!("{arch} psi{} differs from phi", tap.index()));
            }
        }
    }
    Ok("4 architectures × 4 taps identical".into())
}

/// Origin cell equals clean accuracy, MLP constant along n_A, reruns identical.
fn grid_contracts() -> Result<String, String> {
    let g = small_sbm(60, 4);
    let cfg = TrainConfig {
        epochs: 20,
        hidden_dim: 8,
        ..TrainConfig::default()
    };
    let model = train_dnn(&g, Arch::Mlp, &cfg, None).map_err(e2s)?;
    let clean = accuracy(&forward_phi(&model, &g).map_err(e2s)?.predictions, g.labels(), &g.split().test)
        .map_err(e2s)?;
    let bundle = PsiBundle::identity(model).map_err(e2s)?;
    let mut spec = GridSpec::new(NoiseKind::Xc, NoiseKind::Ac, Split::Test, vec![Tap::Z1], 11).map_err(e2s)?;
    spec.levels = vec![0, 30, 70, 100];
    let (grids, _) = run_grid(&bundle, &g, &spec).map_err(e2s)?;
    let (again, _) = run_grid(&bundle, &g, &spec).map_err(e2s)?;
    if grids != again {
        return Err("rerun differs".into());
    }
    for grid in &grids {
        if grid.get(0, 0) != Some(clean) {
            return Err(format!("{} origin {:?} vs clean {clean}", grid.meta.stem(), grid.get(0, 0)));
        }
        if grid.max_spread_along_a() != 0.0 {
            return Err(format!("{} varies along n_A", grid.meta.stem()));
        }
    }
    Ok(format!("{} grids, clean accuracy {clean:.3}", grids.len()))
}

/// KL at iteration 500 below KL at iteration 0 on a two-cluster toy.
fn tsne_descent() -> Result<String, String> {
    let mut rng = rng_from_seed(12);
    let z = DenseMatrix::from_fn(40, 3, |r, _| rng.random_range(-1.0..1.0) + if r < 20 { 0.0 } else { 8.0 });
    let cfg = TsneConfig {
        perplexity: 8.0,
        iterations: 500,
        ..TsneConfig::default()
    };
    let res = tsne_embed(&z, &cfg).map_err(e2s)?;
    let first = res.kl_trace.first().map(|p| p.1).unwrap_or(f64::NAN);
    let at500 = res.kl_trace.iter().find(|p| p.0 == 500).map(|p| p.1).unwrap_or(f64::NAN);
    if !(at500 < first) {
        return Err(format!("KL {first} -> {at500}"));
    }
    Ok(format!("KL {first:.4} -> {at500:.4}"))
}

fn checkpoints() -> Result<String, String> {
    let g = small_sbm(30, 6);
    let bytes = formats::encode_graph(&g);
    let back = formats::decode_graph(std::path::Path::new("memory"), &bytes).map_err(e2s)?;
    if back != g {
        return Err("graph round trip changed the graph".into());
    }
    Ok(format!("{} bytes round-trip", bytes.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for r in run_all() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
