//! φ (plain trained forward pass) and ψᵢ (denoise tap i with RBM-zᵢ, re-inject, continue).

use alloc::{format, vec::Vec};

use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, NodeSet};
use crate::matrix::DenseMatrix;
use crate::nn::{DnnModel, Dropout, ForwardTrace, Mode, Propagation, Tap};
use crate::random::derive_seed;
use crate::rbm::{reconstruct, GbRbm, Scaler};

/// Reconstruction applied at a tap.
#[derive(Debug, Clone, PartialEq)]
pub enum Denoiser {
    Rbm { rbm: GbRbm, scaler: Scaler },
    /// Returns its input unchanged; ψ with this stub must equal φ.
    Identity { width: usize },
}

impl Denoiser {
    pub fn width(&self) -> usize {
        match self {
            Denoiser::Rbm { rbm, .. } => rbm.visible_dim(),
            Denoiser::Identity { width } => *width,
        }
    }

    pub fn apply(&self, z: &DenseMatrix, gibbs_rounds: usize, sample_hidden: bool, seed: u64) -> Result<DenseMatrix> {
        if z.cols() != self.width() {
            return Err(dim_err(
                "denoise",
                format!("representation has {} columns, denoiser expects {}", z.cols(), self.width()),
            ));
        }
        match self {
            Denoiser::Rbm { rbm, scaler } => reconstruct(rbm, scaler, z, gibbs_rounds, sample_hidden, seed),
            Denoiser::Identity { .. } => Ok(z.clone()),
        }
    }
}

/// A trained φ plus one optional denoiser per tap.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiBundle {
    model: DnnModel,
    denoisers: [Option<Denoiser>; 4],
    gibbs_rounds: usize,
    sample_hidden: bool,
    seed: u64,
}

impl PsiBundle {
    /// Checks every denoiser width against its tap width.
    pub fn new(model: DnnModel, denoisers: [Option<Denoiser>; 4], gibbs_rounds: usize) -> Result<Self> {
        model.validate()?;
        if gibbs_rounds == 0 {
            return Err(Error::Config("gibbs_rounds must be >= 1".into()));
        }
        for (i, d) in denoisers.iter().enumerate() {
            if let Some(d) = d {
                let tap = Tap::from_index(i)?;
                if d.width() != model.tap_width(tap) {
                    return Err(dim_err(
                        "psi_bundle",
                        format!("denoiser for {tap} has width {}, tap has {}", d.width(), model.tap_width(tap)),
                    ));
                }
            }
        }
        Ok(Self {
            model,
            denoisers,
            gibbs_rounds,
            sample_hidden: false,
            seed: 0,
        })
    }

    /// Bundle whose every tap uses the identity stub.
    pub fn identity(model: DnnModel) -> Result<Self> {
        let d = |t: Tap| Some(Denoiser::Identity { width: model.tap_width(t) });
        let denoisers = [d(Tap::Z0), d(Tap::Z1), d(Tap::Z2), d(Tap::Z3)];
        Self::new(model, denoisers, 1)
    }

    /// Stochastic hidden states during reconstruction, seeded per tap.
    pub fn with_sampling(mut self, sample_hidden: bool, seed: u64) -> Self {
        self.sample_hidden = sample_hidden;
        self.seed = seed;
        self
    }

    pub fn model(&self) -> &DnnModel {
        &self.model
    }

    pub fn denoiser(&self, tap: Tap) -> Option<&Denoiser> {
        self.denoisers[tap.index()].as_ref()
    }

    pub fn gibbs_rounds(&self) -> usize {
        self.gibbs_rounds
    }

    pub fn sample_hidden(&self) -> bool {
        self.sample_hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Taps that have a denoiser.
    pub fn taps(&self) -> Vec<Tap> {
        Tap::ALL.into_iter().filter(|t| self.denoisers[t.index()].is_some()).collect()
    }
}

/// Output of φ or ψᵢ on one graph.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub predictions: Vec<usize>,
    pub trace: ForwardTrace,
}

/// φ in inference mode: dropout off, batch norm on running statistics.
pub fn forward_phi(model: &DnnModel, g: &Graph) -> Result<PipelineOutput> {
    let prop = Propagation::for_graph(model.arch, g);
    forward_phi_with(model, &prop, g)
}

/// As [`forward_phi`] with a prebuilt propagation operator for `g`.
pub fn forward_phi_with(model: &DnnModel, prop: &Propagation, g: &Graph) -> Result<PipelineOutput> {
    let trace = model.infer(prop, g)?;
    Ok(PipelineOutput {
        predictions: trace.predictions(),
        trace,
    })
}

/// Representation at `tap` restricted to `rows` (in the given order).
pub fn extract_representations(model: &DnnModel, g: &Graph, tap: Tap, rows: &NodeSet) -> Result<DenseMatrix> {
    if tap == Tap::Z0 {
        return model.input_features(g)?.select_rows(rows.as_slice());
    }
    let out = forward_phi(model, g)?;
    out.trace.tap(tap).select_rows(rows.as_slice())
}

/// ψᵢ on a (noisy) graph.
pub fn run_psi(bundle: &PsiBundle, g_noisy: &Graph, tap: Tap) -> Result<PipelineOutput> {
    let prop = Propagation::for_graph(bundle.model.arch, g_noisy);
    let phi = forward_phi_with(&bundle.model, &prop, g_noisy)?;
    run_psi_from(bundle, &prop, &phi.trace, tap)
}

/// ψᵢ reusing a φ trace computed on the same noisy graph: the tapped
/// representation is reconstructed and the chain resumes after the tap.
pub fn run_psi_from(bundle: &PsiBundle, prop: &Propagation, phi_trace: &ForwardTrace, tap: Tap) -> Result<PipelineOutput> {
    let denoiser = bundle
        .denoiser(tap)
        .ok_or_else(|| Error::Config(format!("no denoiser trained for {tap}")))?;
    if phi_trace.start != Tap::Z0 || phi_trace.mode != Mode::Infer {
        return Err(Error::State("psi needs a full inference trace of phi".into()));
    }
    let z = phi_trace.tap(tap);
    let seed = derive_seed(bundle.seed, &[tap.index() as u64]);
    let cleaned = denoiser.apply(z, bundle.gibbs_rounds, bundle.sample_hidden, seed)?;
    let trace = bundle
        .model
        .forward_from(prop, tap, cleaned, Mode::Infer, Dropout::Off)?;
    Ok(PipelineOutput {
        predictions: trace.predictions(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm_graph, SbmConfig};
    use crate::nn::{Arch, TrainConfig};
    use crate::nn::log_softmax;

    fn small_graph(seed: u64) -> Graph {
        generate_sbm_graph(&SbmConfig {
            num_nodes: 40,
            num_classes: 3,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 6,
            feature_shift: 1.0,
            seed,
        })
        .unwrap()
    }

    fn model(arch: Arch, g: &Graph) -> DnnModel {
        let cfg = TrainConfig {
            hidden_dim: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let extra = if arch == Arch::N2v { 4 } else { 0 };
        let mut m = DnnModel::init(arch, g.feature_dim() + extra, cfg.hidden_dim, g.num_classes(), cfg);
        if arch == Arch::N2v {
            m.embeddings = Some(DenseMatrix::from_fn(g.num_nodes(), 4, |i, j| ((i * 7 + j) % 5) as f64 * 0.1));
        }
        for (i, n) in m.norms.iter_mut().enumerate() {
            n.running_mean.iter_mut().for_each(|v| *v = 0.1 * i as f64);
            n.running_var.iter_mut().for_each(|v| *v = 1.5);
        }
        m
    }

    #[test]
    fn identity_stub_reproduces_phi() {
        let g = small_graph(1);
        for arch in Arch::ALL {
            let m = model(arch, &g);
            let phi = forward_phi(&m, &g).unwrap();
            let bundle = PsiBundle::identity(m).unwrap();
            for tap in Tap::ALL {
                let psi = run_psi(&bundle, &g, tap).unwrap();
                assert_eq!(psi.predictions, phi.predictions, "{arch} {tap}");
                assert_eq!(psi.trace.tap(Tap::Z3), phi.trace.tap(Tap::Z3));
            }
        }
    }

    #[test]
    fn zero_weight_chain_predicts_bias_argmax() {
        let g = small_graph(2);
        let mut m = DnnModel::zeroed(Arch::Mlp, g.feature_dim(), 5, 3);
        m.layers[0].bias = alloc::vec![0.5; 5];
        m.layers[2].bias = alloc::vec![0.1, 0.7, 0.7];
        let out = forward_phi(&m, &g).unwrap();
        assert!(out.trace.tap(Tap::Z1).iter_rows().all(|r| r == [0.5; 5]));
        assert!(out.predictions.iter().all(|&p| p == 1));
        let relogged = log_softmax(out.trace.tap(Tap::Z3)).argmax_rows();
        assert_eq!(relogged, out.predictions);
    }

    #[test]
    fn extraction_contracts() {
        let g = small_graph(3);
        let m = model(Arch::Mlp, &g);
        let rows = NodeSet::new(alloc::vec![4, 1, 9]);
        let z0 = extract_representations(&m, &g, Tap::Z0, &rows).unwrap();
        assert_eq!(z0, g.features().select_rows(rows.as_slice()).unwrap());
        let z1 = extract_representations(&m, &g, Tap::Z1, &rows).unwrap();
        assert_eq!(z1.shape(), (3, 8));
        let z3 = extract_representations(&m, &g, Tap::Z3, &NodeSet::default()).unwrap();
        assert_eq!(z3.shape(), (0, 3));
    }

    #[test]
    fn bundle_rejects_width_mismatch_and_missing_taps() {
        let g = small_graph(4);
        let m = model(Arch::Gcn, &g);
        let bad = [None, Some(Denoiser::Identity { width: 3 }), None, None];
        assert!(matches!(PsiBundle::new(m.clone(), bad, 1), Err(Error::Dimension { .. })));
        let only0 = [Some(Denoiser::Identity { width: 6 }), None, None, None];
        let b = PsiBundle::new(m, only0, 1).unwrap();
        assert_eq!(b.taps(), alloc::vec![Tap::Z0]);
        assert!(matches!(run_psi(&b, &g, Tap::Z2), Err(Error::Config(_))));
    }

    #[test]
    fn inference_is_pure() {
        let g = small_graph(5);
        let m = model(Arch::Sage, &g);
        let a = forward_phi(&m, &g).unwrap();
        let b = forward_phi(&m, &g).unwrap();
        assert_eq!(a.trace.taps, b.trace.taps);
    }
}
