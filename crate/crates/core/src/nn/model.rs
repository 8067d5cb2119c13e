//! The three-layer classifier: NN₁ → BN → ReLU → dropout → NN₂ → BN → ReLU →
//! dropout → NN₃ → log-softmax, with representation taps z₀…z₃ and manual
//! reverse-mode gradients.

use alloc::{format, string::String, vec::Vec};
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::graph::{mean_aggregator, normalize_adjacency, Graph};
use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::nn::layers::{
    log_softmax, relu_masked, relu_masked_backward, BatchNormState, BnCache, DropoutMask, Mode,
};
use crate::nn::train::TrainConfig;
use crate::random::{rng_from_seed, SeededRng};

/// Baseline architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arch {
    Mlp,
    N2v,
    Gcn,
    Sage,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Mlp, Arch::N2v, Arch::Gcn, Arch::Sage];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::N2v => "n2v",
            Arch::Gcn => "gcn",
            Arch::Sage => "sage",
        }
    }

    /// Whether the architecture reads the adjacency matrix.
    pub fn uses_graph(self) -> bool {
        matches!(self, Arch::Gcn | Arch::Sage)
    }

    pub fn tag(self) -> u8 {
        match self {
            Arch::Mlp => 0,
            Arch::N2v => 1,
            Arch::Gcn => 2,
            Arch::Sage => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Arch> {
        Arch::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Arch::Mlp),
            "n2v" | "node2vec" => Ok(Arch::N2v),
            "gcn" => Ok(Arch::Gcn),
            "sage" | "graphsage" => Ok(Arch::Sage),
            other => Err(Error::Argument(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Representation tap: z₀ input, z₁/z₂ pre-batch-norm hidden outputs, z₃ logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tap {
    Z0,
    Z1,
    Z2,
    Z3,
}

impl Tap {
    pub const ALL: [Tap; 4] = [Tap::Z0, Tap::Z1, Tap::Z2, Tap::Z3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Tap> {
        Tap::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Argument(format!("tap index {i} outside 0..=3")))
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z{}", self.index())
    }
}

/// One weight layer. `weight_neigh` is present only for SAGE.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub weight_neigh: Option<DenseMatrix>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn he_uniform(fan_in: usize, fan_out: usize, with_neigh: bool, rng: &mut SeededRng) -> Self {
        let limit = libm::sqrt(6.0 / fan_in.max(1) as f64);
        let draw = |rng: &mut SeededRng| {
            DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit))
        };
        let weight = draw(rng);
        let weight_neigh = with_neigh.then(|| draw(rng));
        Self {
            weight,
            weight_neigh,
            bias: alloc::vec![0.0; fan_out],
        }
    }

    fn zeros(fan_in: usize, fan_out: usize, with_neigh: bool) -> Self {
        Self {
            weight: DenseMatrix::zeros(fan_in, fan_out),
            weight_neigh: with_neigh.then(|| DenseMatrix::zeros(fan_in, fan_out)),
            bias: alloc::vec![0.0; fan_out],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Trained classifier φ.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnModel {
    pub arch: Arch,
    pub layers: [Linear; 3],
    pub norms: [BatchNormState; 2],
    pub dropout_p: f64,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// node2vec embeddings appended to the raw features (N2V only).
    pub embeddings: Option<DenseMatrix>,
    pub config: TrainConfig,
}

/// Graph propagation operator matching the architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Propagation {
    Identity,
    Gcn(CsrMatrix),
    Sage(CsrMatrix),
}

impl Propagation {
    pub fn for_graph(arch: Arch, g: &Graph) -> Self {
        match arch {
            Arch::Mlp | Arch::N2v => Propagation::Identity,
            Arch::Gcn => Propagation::Gcn(normalize_adjacency(g, true)),
            Arch::Sage => Propagation::Sage(mean_aggregator(g)),
        }
    }

    fn matches(&self, arch: Arch) -> bool {
        matches!(
            (self, arch),
            (Propagation::Identity, Arch::Mlp | Arch::N2v)
                | (Propagation::Gcn(_), Arch::Gcn)
                | (Propagation::Sage(_), Arch::Sage)
        )
    }
}

/// Where dropout masks come from during a forward pass.
pub enum Dropout<'a> {
    Off,
    Sample(&'a mut SeededRng),
    Fixed(&'a [DropoutMask; 2]),
}

/// Everything a forward pass produced, including backprop intermediates.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub start: Tap,
    pub mode: Mode,
    /// z₀…z₃; taps upstream of `start` are empty 0×0 matrices.
    pub taps: [DenseMatrix; 4],
    pub log_probs: DenseMatrix,
    pub masks: [Option<DropoutMask>; 2],
    layer_inputs: [DenseMatrix; 3],
    aggregated: [Option<DenseMatrix>; 3],
    norm_out: [DenseMatrix; 2],
    norm_cache: [Option<BnCache>; 2],
}

impl ForwardTrace {
    pub fn predictions(&self) -> Vec<usize> {
        self.taps[3].argmax_rows()
    }

    pub fn tap(&self, tap: Tap) -> &DenseMatrix {
        &self.taps[tap.index()]
    }

    /// Batch statistics of each BN block (train mode only).
    pub fn batch_stats(&self) -> [Option<(&[f64], &[f64])>; 2] {
        fn get(c: &Option<BnCache>) -> Option<(&[f64], &[f64])> {
            c.as_ref()
                .filter(|c| c.mode == Mode::Train)
                .map(|c| (c.batch_mean.as_slice(), c.batch_var.as_slice()))
        }
        [get(&self.norm_cache[0]), get(&self.norm_cache[1])]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: DenseMatrix,
    pub weight_neigh: Option<DenseMatrix>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrad {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Loss gradients for every parameter of a [`DnnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: [LayerGrad; 3],
    pub norms: [NormGrad; 2],
}

impl Gradients {
    /// Parameter-ordered views, matching [`DnnModel::named_params_mut`].
    pub fn named_slices(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, g) in self.layers.iter().enumerate() {
            out.push((format!("layer{}.weight", l + 1), g.weight.as_slice()));
            if let Some(wn) = &g.weight_neigh {
                out.push((format!("layer{}.weight_neigh", l + 1), wn.as_slice()));
            }
            out.push((format!("layer{}.bias", l + 1), &g.bias));
        }
        for (l, g) in self.norms.iter().enumerate() {
            out.push((format!("bn{}.gamma", l + 1), &g.gamma));
            out.push((format!("bn{}.beta", l + 1), &g.beta));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.named_slices().iter().all(|(_, s)| s.iter().all(|&v| v == 0.0))
    }
}

impl DnnModel {
    /// He-uniform weights, zero biases, fresh batch-norm blocks.
    pub fn init(
        arch: Arch,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        config: TrainConfig,
    ) -> Self {
        let mut rng = rng_from_seed(crate::random::derive_seed(config.seed, &[0x1417]));
        let sage = arch == Arch::Sage;
        let layers = [
            Linear::he_uniform(input_dim, hidden_dim, sage, &mut rng),
            Linear::he_uniform(hidden_dim, hidden_dim, sage, &mut rng),
            Linear::he_uniform(hidden_dim, num_classes, sage, &mut rng),
        ];
        Self::assemble(arch, layers, input_dim, hidden_dim, num_classes, config)
    }

    /// All weights and biases zero.
    pub fn zeroed(arch: Arch, input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        let sage = arch == Arch::Sage;
        let layers = [
            Linear::zeros(input_dim, hidden_dim, sage),
            Linear::zeros(hidden_dim, hidden_dim, sage),
            Linear::zeros(hidden_dim, num_classes, sage),
        ];
        let config = TrainConfig {
            hidden_dim,
            ..TrainConfig::default()
        };
        Self::assemble(arch, layers, input_dim, hidden_dim, num_classes, config)
    }

    fn assemble(
        arch: Arch,
        layers: [Linear; 3],
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        config: TrainConfig,
    ) -> Self {
        Self {
            arch,
            layers,
            norms: [BatchNormState::new(hidden_dim), BatchNormState::new(hidden_dim)],
            dropout_p: config.dropout_p,
            input_dim,
            hidden_dim,
            num_classes,
            embeddings: None,
            config,
        }
    }

    /// Checks the input → hidden → hidden → classes shape chain.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            (self.input_dim, self.hidden_dim),
            (self.hidden_dim, self.hidden_dim),
            (self.hidden_dim, self.num_classes),
        ];
        for (l, (layer, &(fan_in, fan_out))) in self.layers.iter().zip(&dims).enumerate() {
            let shape_ok = layer.weight.shape() == (fan_in, fan_out)
                && layer.bias.len() == fan_out
                && match (&layer.weight_neigh, self.arch) {
                    (Some(wn), Arch::Sage) => wn.shape() == (fan_in, fan_out),
                    (None, Arch::Mlp | Arch::N2v | Arch::Gcn) => true,
                    _ => false,
                };
            if !shape_ok {
                return Err(Error::Integrity(format!("layer {} has inconsistent shapes", l + 1)));
            }
        }
        for (l, bn) in self.norms.iter().enumerate() {
            if bn.features() != self.hidden_dim || bn.running_var.iter().any(|&v| v < 0.0) || bn.epsilon <= 0.0 {
                return Err(Error::Integrity(format!("batch norm {} is inconsistent", l + 1)));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Integrity(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Width of each representation tap.
    pub fn tap_width(&self, tap: Tap) -> usize {
        match tap {
            Tap::Z0 => self.input_dim,
            Tap::Z1 | Tap::Z2 => self.hidden_dim,
            Tap::Z3 => self.num_classes,
        }
    }

    /// z₀: raw node features, with node2vec embeddings appended for N2V.
    pub fn input_features(&self, g: &Graph) -> Result<DenseMatrix> {
        let z0 = match (&self.embeddings, self.arch) {
            (Some(e), Arch::N2v) => g.features().hcat(e)?,
            (None, Arch::N2v) => {
                return Err(Error::Config("N2V model has no stored embeddings".into()))
            }
            _ => g.features().clone(),
        };
        if z0.cols() != self.input_dim {
            return Err(dim_err(
                "input_features",
                format!("input has {} columns, model expects {}", z0.cols(), self.input_dim),
            ));
        }
        Ok(z0)
    }

    fn layer_forward(
        &self,
        l: usize,
        prop: &Propagation,
        h: &DenseMatrix,
    ) -> Result<(DenseMatrix, Option<DenseMatrix>)> {
        let layer = &self.layers[l];
        match prop {
            Propagation::Identity => Ok((crate::nn::layers::dense_forward(h, &layer.weight, &layer.bias)?, None)),
            Propagation::Gcn(a) => {
                let ah = a.spmm(h)?;
                let z = crate::nn::layers::dense_forward(&ah, &layer.weight, &layer.bias)?;
                Ok((z, Some(ah)))
            }
            Propagation::Sage(m) => {
                let wn = layer
                    .weight_neigh
                    .as_ref()
                    .ok_or_else(|| Error::Integrity("SAGE layer without neighbor weight".into()))?;
                let mh = m.spmm(h)?;
                let mut z = crate::nn::layers::dense_forward(h, &layer.weight, &layer.bias)?;
                z.add_assign(&mh.matmul(wn)?)?;
                Ok((z, Some(mh)))
            }
        }
    }

    /// Runs the chain starting from representation `start`, whose value is
    /// `z_start`. Starting at z₁/z₂ enters at the following batch norm;
    /// starting at z₃ goes straight to log-softmax.
    pub fn forward_from(
        &self,
        prop: &Propagation,
        start: Tap,
        z_start: DenseMatrix,
        mode: Mode,
        mut dropout: Dropout<'_>,
    ) -> Result<ForwardTrace> {
        if !prop.matches(self.arch) {
            return Err(Error::Config(format!(
                "propagation operator does not match architecture {}",
                self.arch
            )));
        }
        let s = start.index();
        if z_start.cols() != self.tap_width(start) {
            return Err(dim_err(
                "forward",
                format!(
                    "{start} has {} columns, model expects {}",
                    z_start.cols(),
                    self.tap_width(start)
                ),
            ));
        }
        if let Propagation::Gcn(a) | Propagation::Sage(a) = prop {
            if a.n_rows() != z_start.rows() {
                return Err(dim_err(
                    "forward",
                    format!("{} rows for a {}-node propagation operator", z_start.rows(), a.n_rows()),
                ));
            }
        }
        let rows = z_start.rows();
        let empty = DenseMatrix::default;
        let mut taps = [empty(), empty(), empty(), empty()];
        let mut layer_inputs = [empty(), empty(), empty()];
        let mut aggregated = [None, None, None];
        let mut norm_out = [empty(), empty()];
        let mut norm_cache = [None, None];
        let mut masks = [None, None];

        taps[s] = z_start;
        let mut h = (s == 0).then(|| taps[0].clone());
        for l in 0..3 {
            let out_tap = l + 1;
            if out_tap > s {
                let input = h.take().expect("activation available for the next layer");
                let (z, agg) = self.layer_forward(l, prop, &input)?;
                layer_inputs[l] = input;
                aggregated[l] = agg;
                taps[out_tap] = z;
            }
            if l < 2 && out_tap >= s {
                let (y, cache) = self.norms[l].normalize(&taps[out_tap], mode)?;
                let len = rows * self.hidden_dim;
                let mask = match (&mut dropout, mode) {
                    (_, Mode::Infer) | (Dropout::Off, _) => DropoutMask::ones(len),
                    (Dropout::Sample(rng), Mode::Train) => DropoutMask::sample(len, self.dropout_p, *rng),
                    (Dropout::Fixed(fixed), Mode::Train) => {
                        if fixed[l].0.len() != len {
                            return Err(Error::State(format!("fixed dropout mask {} has wrong length", l + 1)));
                        }
                        fixed[l].clone()
                    }
                };
                h = Some(relu_masked(&y, &mask));
                norm_out[l] = y;
                norm_cache[l] = Some(cache);
                masks[l] = Some(mask);
            }
        }
        let log_probs = log_softmax(&taps[3]);
        Ok(ForwardTrace {
            start,
            mode,
            taps,
            log_probs,
            masks,
            layer_inputs,
            aggregated,
            norm_out,
            norm_cache,
        })
    }

    /// Full inference pass from the (possibly noisy) graph.
    pub fn infer(&self, prop: &Propagation, g: &Graph) -> Result<ForwardTrace> {
        self.forward_from(prop, Tap::Z0, self.input_features(g)?, Mode::Infer, Dropout::Off)
    }

    /// Reverse-mode gradients given `∂loss/∂z₃`.
    pub fn backward(&self, prop: &Propagation, trace: &ForwardTrace, d_logits: &DenseMatrix) -> Result<Gradients> {
        if trace.start != Tap::Z0 {
            return Err(Error::State(format!(
                "forward trace started at {}; gradients need a full pass from z0",
                trace.start
            )));
        }
        if d_logits.shape() != trace.taps[3].shape()
            || trace.layer_inputs[0].cols() != self.input_dim
            || trace.norm_cache.iter().any(Option::is_none)
        {
            return Err(Error::State("forward intermediates do not match this model".into()));
        }
        if !prop.matches(self.arch) {
            return Err(Error::Config("propagation operator does not match architecture".into()));
        }

        let mut dz = d_logits.clone();
        let mut layer_grads: [Option<LayerGrad>; 3] = [None, None, None];
        let mut norm_grads: [Option<NormGrad>; 2] = [None, None];
        for l in (0..3).rev() {
            let layer = &self.layers[l];
            let input = &trace.layer_inputs[l];
            let bias = dz.column_sums();
            let (weight, weight_neigh, dh) = match (prop, &trace.aggregated[l]) {
                (Propagation::Identity, _) => (input.t_matmul(&dz)?, None, dz.matmul_t(&layer.weight)?),
                (Propagation::Gcn(a), Some(ah)) => {
                    let d_agg = dz.matmul_t(&layer.weight)?;
                    (ah.t_matmul(&dz)?, None, a.transpose_spmm(&d_agg)?)
                }
                (Propagation::Sage(m), Some(mh)) => {
                    let wn = layer
                        .weight_neigh
                        .as_ref()
                        .ok_or_else(|| Error::Integrity("SAGE layer without neighbor weight".into()))?;
                    let mut dh = dz.matmul_t(&layer.weight)?;
                    dh.add_assign(&m.transpose_spmm(&dz.matmul_t(wn)?)?)?;
                    (input.t_matmul(&dz)?, Some(mh.t_matmul(&dz)?), dh)
                }
                _ => return Err(Error::State(format!("missing aggregation cache for layer {}", l + 1))),
            };
            layer_grads[l] = Some(LayerGrad {
                weight,
                weight_neigh,
                bias,
            });
            if l > 0 {
                let b = l - 1;
                let mask = trace.masks[b]
                    .as_ref()
                    .ok_or_else(|| Error::State("missing dropout mask".into()))?;
                let cache = trace.norm_cache[b].as_ref().expect("checked above");
                let dy = relu_masked_backward(&trace.norm_out[b], mask, &dh);
                let (dz_prev, gamma, beta) = self.norms[b].backward(cache, &dy)?;
                norm_grads[b] = Some(NormGrad { gamma, beta });
                dz = dz_prev;
            }
        }
        let [l0, l1, l2] = layer_grads;
        let [n0, n1] = norm_grads;
        Ok(Gradients {
            layers: [l0.unwrap(), l1.unwrap(), l2.unwrap()],
            norms: [n0.unwrap(), n1.unwrap()],
        })
    }

    /// Parameter-ordered mutable views, matching [`Gradients::named_slices`].
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{}.weight", l + 1), layer.weight.as_mut_slice()));
            if let Some(wn) = &mut layer.weight_neigh {
                out.push((format!("layer{}.weight_neigh", l + 1), wn.as_mut_slice()));
            }
            out.push((format!("layer{}.bias", l + 1), &mut layer.bias));
        }
        for (l, bn) in self.norms.iter_mut().enumerate() {
            out.push((format!("bn{}.gamma", l + 1), &mut bn.gamma));
            out.push((format!("bn{}.beta", l + 1), &mut bn.beta));
        }
        out
    }

    /// Folds a train-mode trace's batch statistics into the running estimates.
    pub fn absorb_batch_stats(&mut self, trace: &ForwardTrace) {
        let stats = trace.batch_stats();
        for (bn, stat) in self.norms.iter_mut().zip(stats) {
            if let Some((mean, var)) = stat {
                bn.absorb(mean, var);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeSet, SplitMasks};
    use crate::nn::layers::{log_softmax_nll, nll_logit_grad};

    fn random_graph(n: usize, d: usize, c: usize, seed: u64) -> Graph {
        let mut rng = rng_from_seed(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < 0.25 {
                    edges.push((i, j));
                }
            }
        }
        let features = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let labels = (0..n).map(|i| i % c).collect();
        let split = SplitMasks {
            train: NodeSet::range(0, n * 2 / 3),
            val: NodeSet::range(n * 2 / 3, n),
            test: NodeSet::default(),
        };
        Graph::from_edges(n, &edges, true, features, labels, c, split).unwrap()
    }

    fn model(arch: Arch, d: usize, hidden: usize, c: usize, seed: u64) -> DnnModel {
        let cfg = TrainConfig {
            hidden_dim: hidden,
            dropout_p: 0.3,
            seed,
            ..TrainConfig::default()
        };
        let mut m = DnnModel::init(arch, d, hidden, c, cfg);
        let mut rng = rng_from_seed(seed ^ 99);
        for (_, p) in m.named_params_mut() {
            for v in p.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        m
    }

    fn loss_at(m: &DnnModel, prop: &Propagation, z0: &DenseMatrix, g: &Graph, masks: &[DropoutMask; 2]) -> f64 {
        let t = m
            .forward_from(prop, Tap::Z0, z0.clone(), Mode::Train, Dropout::Fixed(masks))
            .unwrap();
        log_softmax_nll(&t.taps[3], g.labels(), &g.split().train).unwrap().0
    }

    /// Central finite differences over every parameter, norm-relative error.
    fn check_gradients(arch: Arch, seed: u64) {
        let g = random_graph(12, 5, 3, seed);
        let m = model(arch, 5, 6, 3, seed);
        let prop = Propagation::for_graph(arch, &g);
        let z0 = g.features().clone();
        let mut rng = rng_from_seed(seed + 1);
        let masks = [
            DropoutMask::sample(12 * 6, 0.3, &mut rng),
            DropoutMask::sample(12 * 6, 0.3, &mut rng),
        ];
        let trace = m
            .forward_from(&prop, Tap::Z0, z0.clone(), Mode::Train, Dropout::Fixed(&masks))
            .unwrap();
        let dlogits = nll_logit_grad(&trace.log_probs, g.labels(), &g.split().train);
        let grads = m.backward(&prop, &trace, &dlogits).unwrap();
        let analytic: Vec<(String, Vec<f64>)> =
            grads.named_slices().into_iter().map(|(n, s)| (n, s.to_vec())).collect();

        let eps = 1e-4;
        let names: Vec<String> = analytic.iter().map(|(n, _)| n.clone()).collect();
        for (pi, name) in names.iter().enumerate() {
            let len = analytic[pi].1.len();
            let mut numeric = alloc::vec![0.0; len];
            for k in 0..len {
                let mut plus = m.clone();
                plus.named_params_mut()[pi].1[k] += eps;
                let mut minus = m.clone();
                minus.named_params_mut()[pi].1[k] -= eps;
                numeric[k] = (loss_at(&plus, &prop, &z0, &g, &masks) - loss_at(&minus, &prop, &z0, &g, &masks)) / (2.0 * eps);
            }
            let a = &analytic[pi].1;
            let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            // Parameters feeding a train-mode batch norm shift have exactly zero
            // gradient; the floor keeps round-off from reading as relative error.
            let rel = diff / scale.max(1e-7);
            assert!(rel <= 1e-3, "{arch} {name}: relative error {rel}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_arch() {
        for arch in Arch::ALL {
            for seed in [1, 2] {
                check_gradients(arch, seed);
            }
        }
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let g = random_graph(8, 4, 2, 5);
        for arch in [Arch::Gcn, Arch::Sage, Arch::Mlp] {
            let m = model(arch, 4, 5, 2, 5);
            let prop = Propagation::for_graph(arch, &g);
            let trace = m
                .forward_from(&prop, Tap::Z0, g.features().clone(), Mode::Train, Dropout::Off)
                .unwrap();
            let grads = m.backward(&prop, &trace, &DenseMatrix::zeros(8, 2)).unwrap();
            assert!(grads.is_zero());
        }
    }

    #[test]
    fn backward_rejects_partial_trace() {
        let g = random_graph(6, 3, 2, 9);
        let m = model(Arch::Gcn, 3, 4, 2, 9);
        let prop = Propagation::for_graph(Arch::Gcn, &g);
        let trace = m
            .forward_from(&prop, Tap::Z1, DenseMatrix::zeros(6, 4), Mode::Train, Dropout::Off)
            .unwrap();
        assert!(matches!(
            m.backward(&prop, &trace, &DenseMatrix::zeros(6, 2)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn infer_is_pure() {
        let g = random_graph(10, 4, 3, 4);
        let m = model(Arch::Sage, 4, 5, 3, 4);
        let prop = Propagation::for_graph(Arch::Sage, &g);
        let a = m.infer(&prop, &g).unwrap();
        let b = m.infer(&prop, &g).unwrap();
        assert_eq!(a.taps, b.taps);
    }

    #[test]
    fn zero_weight_chain_predicts_bias_argmax() {
        let g = random_graph(5, 3, 3, 1);
        let mut m = DnnModel::zeroed(Arch::Mlp, 3, 4, 3);
        m.layers[0].bias = alloc::vec![0.5, -1.0, 2.0, 0.0];
        m.layers[2].bias = alloc::vec![0.1, 0.7, 0.3];
        let t = m.infer(&Propagation::Identity, &g).unwrap();
        for row in t.taps[1].iter_rows() {
            assert_eq!(row, &[0.5, -1.0, 2.0, 0.0]);
        }
        assert_eq!(t.predictions(), alloc::vec![1; 5]);
    }

    #[test]
    fn mismatched_propagation_is_rejected() {
        let g = random_graph(4, 3, 2, 1);
        let m = DnnModel::zeroed(Arch::Gcn, 3, 4, 2);
        assert!(matches!(m.infer(&Propagation::Identity, &g), Err(Error::Config(_))));
    }
}
