//! Gaussian-Bernoulli restricted Boltzmann machine.
//!
//! Energy of a visible/hidden configuration:
//!
//! ```text
//! E(v, h) = Σᵢ (vᵢ − b_vᵢ)² / 2σᵢ²  −  Σᵢⱼ (vᵢ/σᵢ) Wᵢⱼ hⱼ  −  Σⱼ b_hⱼ hⱼ
//! ```
//!
//! with conditionals `P(hⱼ=1 | v) = logistic(b_hⱼ + Σᵢ (vᵢ/σᵢ) Wᵢⱼ)` and
//! `vᵢ | h ~ N(b_vᵢ + σᵢ Σⱼ Wᵢⱼ hⱼ, σᵢ²)`. Training runs CD-k on standardized
//! data with σ fixed at 1.

use alloc::{format, vec, vec::Vec};

use rand::{seq::SliceRandom, Rng};

use crate::error::{dim_err, Error, Result};
use crate::matrix::DenseMatrix;
use crate::random::{derive_seed, logistic, rng_from_seed, standard_normal, SeededRng};

/// Minimum standard deviation used by [`Scaler`].
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GbRbm {
    /// |V| × |H| couplings.
    pub weights: DenseMatrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GbRbm {
    /// Zero biases, unit σ, weights drawn from N(0, 0.01²).
    pub fn init(visible: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Self {
            weights: DenseMatrix::from_fn(visible, hidden, |_, _| 0.01 * standard_normal(&mut rng)),
            visible_bias: vec![0.0; visible],
            hidden_bias: vec![0.0; hidden],
            sigma: vec![1.0; visible],
        }
    }

    pub fn zeros(visible: usize, hidden: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(visible, hidden),
            visible_bias: vec![0.0; visible],
            hidden_bias: vec![0.0; hidden],
            sigma: vec![1.0; visible],
        }
    }

    pub fn visible_dim(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (v, h) = (self.visible_dim(), self.hidden_dim());
        if self.weights.shape() != (v, h) || self.sigma.len() != v {
            return Err(Error::Integrity(format!(
                "RBM shapes disagree: W {:?}, |V|={v}, |H|={h}, σ {}",
                self.weights.shape(),
                self.sigma.len()
            )));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Integrity("σ must be positive".into()));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("RBM parameters".into()));
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.weights.is_finite()
            && self.visible_bias.iter().chain(&self.hidden_bias).chain(&self.sigma).all(|v| v.is_finite())
    }

    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        if v.len() != self.visible_dim() || h.len() != self.hidden_dim() {
            return Err(dim_err(
                "energy",
                format!("v has {}, h has {} for a {}x{} RBM", v.len(), h.len(), self.visible_dim(), self.hidden_dim()),
            ));
        }
        let mut e = 0.0;
        for i in 0..v.len() {
            let s = self.sigma[i];
            let d = v[i] - self.visible_bias[i];
            e += d * d / (2.0 * s * s);
            let vs = v[i] / s;
            for (j, &hj) in h.iter().enumerate() {
                e -= vs * self.weights[(i, j)] * hj;
            }
        }
        e -= self.hidden_bias.iter().zip(h).map(|(b, hj)| b * hj).sum::<f64>();
        Ok(e)
    }

    fn hidden_preactivation(&self, v: &DenseMatrix) -> Result<DenseMatrix> {
        if v.cols() != self.visible_dim() {
            return Err(dim_err(
                "hidden_conditional",
                format!("{} visible columns for |V|={}", v.cols(), self.visible_dim()),
            ));
        }
        let scaled = DenseMatrix::from_fn(v.rows(), v.cols(), |r, i| v[(r, i)] / self.sigma[i]);
        let mut pre = scaled.matmul(&self.weights)?;
        pre.add_row_vector(&self.hidden_bias)?;
        Ok(pre)
    }

    /// `P(h=1 | v)` row-wise.
    pub fn hidden_conditional(&self, v: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.hidden_preactivation(v)?.map(logistic))
    }

    /// Mean of `v | h`: `b_v + σ ∘ (W h)`.
    pub fn visible_mean(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if h.cols() != self.hidden_dim() {
            return Err(dim_err(
                "visible_conditional",
                format!("{} hidden columns for |H|={}", h.cols(), self.hidden_dim()),
            ));
        }
        let wh = h.matmul_t(&self.weights)?;
        Ok(DenseMatrix::from_fn(h.rows(), self.visible_dim(), |r, i| {
            self.visible_bias[i] + self.sigma[i] * wh[(r, i)]
        }))
    }

    /// Mean-field (`sample = false`) or sampled Gaussian visibles given `h`.
    pub fn visible_conditional<R: Rng + ?Sized>(&self, h: &DenseMatrix, sample: bool, rng: &mut R) -> Result<DenseMatrix> {
        let mut mean = self.visible_mean(h)?;
        if sample {
            let cols = mean.cols();
            for (k, v) in mean.as_mut_slice().iter_mut().enumerate() {
                *v += self.sigma[k % cols] * standard_normal(rng);
            }
        }
        Ok(mean)
    }

    /// One CD-k update on `batch`; returns the mean squared reconstruction
    /// error of the final negative-phase visibles.
    ///
    /// Positive statistics use hidden probabilities. The chain samples hidden
    /// states and intermediate visibles; the last visible is mean-field. σ is
    /// not learned. The model is left untouched if the update would produce
    /// non-finite parameters.
    pub fn cd_update(&mut self, batch: &DenseMatrix, k: usize, lr: f64, rng: &mut SeededRng) -> Result<f64> {
        if k == 0 {
            return Err(Error::Argument("cd_steps must be >= 1".into()));
        }
        if batch.rows() == 0 {
            return Err(Error::Argument("CD batch is empty".into()));
        }
        let h_pos = self.hidden_conditional(batch)?;
        let mut h_state = sample_bernoulli(&h_pos, rng);
        let mut v_neg = DenseMatrix::default();
        let mut h_neg = DenseMatrix::default();
        for step in 1..=k {
            v_neg = self.visible_conditional(&h_state, step < k, rng)?;
            h_neg = self.hidden_conditional(&v_neg)?;
            if step < k {
                h_state = sample_bernoulli(&h_neg, rng);
            }
        }

        let n = batch.rows() as f64;
        let (nv, nh) = (self.visible_dim(), self.hidden_dim());
        let scale_rows = |m: &DenseMatrix| DenseMatrix::from_fn(m.rows(), nv, |r, i| m[(r, i)] / self.sigma[i]);
        let pos = scale_rows(batch).t_matmul(&h_pos)?;
        let neg = scale_rows(&v_neg).t_matmul(&h_neg)?;

        let mut next = self.clone();
        for i in 0..nv {
            for j in 0..nh {
                next.weights[(i, j)] += lr * (pos[(i, j)] - neg[(i, j)]) / n;
            }
        }
        let sum_pos_v = batch.column_sums();
        let sum_neg_v = v_neg.column_sums();
        for i in 0..nv {
            let s2 = self.sigma[i] * self.sigma[i];
            next.visible_bias[i] += lr * (sum_pos_v[i] - sum_neg_v[i]) / (n * s2);
        }
        let sum_pos_h = h_pos.column_sums();
        let sum_neg_h = h_neg.column_sums();
        for j in 0..nh {
            next.hidden_bias[j] += lr * (sum_pos_h[j] - sum_neg_h[j]) / n;
        }
        if !next.is_finite() {
            return Err(Error::NonFinite("RBM parameters after CD update".into()));
        }
        *self = next;

        let err = batch
            .as_slice()
            .iter()
            .zip(v_neg.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (batch.rows() * nv) as f64;
        Ok(err)
    }
}

fn sample_bernoulli<R: Rng + ?Sized>(p: &DenseMatrix, rng: &mut R) -> DenseMatrix {
    p.map(|pv| if rng.random::<f64>() < pv { 1.0 } else { 0.0 })
}

/// Per-dimension standardization fitted on the RBM training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(z: &DenseMatrix) -> Self {
        let n = z.rows().max(1) as f64;
        let mean: Vec<f64> = z.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; z.cols()];
        for row in z.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                var[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        let std = var.into_iter().map(|v| libm::sqrt(v / n).max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, z: &DenseMatrix) -> Result<()> {
        if z.cols() != self.dim() {
            return Err(dim_err("scaler", format!("{} columns for a {}-dim scaler", z.cols(), self.dim())));
        }
        Ok(())
    }

    pub fn transform(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(z)?;
        Ok(DenseMatrix::from_fn(z.rows(), z.cols(), |r, j| (z[(r, j)] - self.mean[j]) / self.std[j]))
    }

    pub fn inverse_transform(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(z)?;
        Ok(DenseMatrix::from_fn(z.rows(), z.cols(), |r, j| z[(r, j)] * self.std[j] + self.mean[j]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmTrainConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub cd_steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RbmTrainConfig {
    fn default() -> Self {
        Self {
            hidden_units: 256,
            epochs: 100,
            batch_size: 64,
            cd_steps: 1,
            lr: 0.01,
            seed: 0,
        }
    }
}

impl RbmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cd_steps == 0 || self.batch_size == 0 || self.hidden_units == 0 {
            return Err(Error::Argument("cd_steps, batch_size and hidden_units must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("RBM learning rate {} invalid", self.lr)));
        }
        Ok(())
    }
}

/// Fits a scaler on `z`, then trains an RBM on the standardized rows with
/// shuffled minibatch CD-k.
pub fn train_rbm(z: &DenseMatrix, cfg: &RbmTrainConfig) -> Result<(GbRbm, Scaler)> {
    train_rbm_with_history(z, cfg).map(|(rbm, scaler, _)| (rbm, scaler))
}

/// As [`train_rbm`], also returning the mean reconstruction error per epoch.
pub fn train_rbm_with_history(z: &DenseMatrix, cfg: &RbmTrainConfig) -> Result<(GbRbm, Scaler, Vec<f64>)> {
    cfg.validate()?;
    if z.rows() < cfg.batch_size {
        return Err(Error::Argument(format!(
            "{} training rows for batch size {}",
            z.rows(),
            cfg.batch_size
        )));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("RBM training data".into()));
    }
    let scaler = Scaler::fit(z);
    let data = scaler.transform(z)?;
    let mut rbm = GbRbm::init(z.cols(), cfg.hidden_units, derive_seed(cfg.seed, &[0]));
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[1]));
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select_rows(chunk)?;
            total += rbm.cd_update(&batch, cfg.cd_steps, cfg.lr, &mut rng)?;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((rbm, scaler, history))
}

/// Gibbs-chain reconstruction of (noisy) representations.
///
/// Standardizes, alternates hidden probabilities and visibles for
/// `gibbs_rounds` rounds and de-standardizes the final mean-field visibles.
/// With `sample_hidden` the hidden states are Bernoulli draws and any
/// intermediate visibles are Gaussian draws; otherwise every step is
/// mean-field and `seed` is unused.
pub fn reconstruct(
    rbm: &GbRbm,
    scaler: &Scaler,
    z_noisy: &DenseMatrix,
    gibbs_rounds: usize,
    sample_hidden: bool,
    seed: u64,
) -> Result<DenseMatrix> {
    if gibbs_rounds == 0 {
        return Err(Error::Argument("gibbs_rounds must be >= 1".into()));
    }
    if scaler.dim() != rbm.visible_dim() {
        return Err(dim_err(
            "reconstruct",
            format!("scaler has {} dims, RBM has {} visibles", scaler.dim(), rbm.visible_dim()),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut v = scaler.transform(z_noisy)?;
    for round in 0..gibbs_rounds {
        let mut h = rbm.hidden_conditional(&v)?;
        if sample_hidden {
            h = sample_bernoulli(&h, &mut rng);
        }
        let last = round + 1 == gibbs_rounds;
        v = rbm.visible_conditional(&h, sample_hidden && !last, &mut rng)?;
    }
    scaler.inverse_transform(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn tiny(w: f64, bv: f64, bh: f64, sigma: f64) -> GbRbm {
        GbRbm {
            weights: m(&[&[w]]),
            visible_bias: vec![bv],
            hidden_bias: vec![bh],
            sigma: vec![sigma],
        }
    }

    #[test]
    fn energy_examples() {
        let z = GbRbm::zeros(2, 3);
        assert_eq!(z.energy(&[0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        let r = tiny(0.5, 0.0, 0.2, 1.0);
        assert!((r.energy(&[1.0], &[1.0]).unwrap() + 0.2).abs() < 1e-15);
        let a = tiny(0.0, 0.0, 0.0, 2.0).energy(&[2.0], &[0.0]).unwrap();
        let b = tiny(0.0, 0.0, 0.0, 1.0).energy(&[1.0], &[0.0]).unwrap();
        assert_eq!(a, b);
        assert!(r.energy(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn hidden_conditional_examples() {
        let p = GbRbm::zeros(3, 2).hidden_conditional(&m(&[&[1.0, -4.0, 2.0]])).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.5));
        let p = tiny(1.0, 0.0, -1.0, 1.0).hidden_conditional(&m(&[&[2.0]])).unwrap();
        assert!((p[(0, 0)] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((p[(0, 0)] - 0.73106).abs() < 1e-5);
        let p = tiny(0.0, 0.0, 1000.0, 1.0).hidden_conditional(&m(&[&[0.0]])).unwrap();
        assert_eq!(p[(0, 0)], 1.0);
    }

    #[test]
    fn visible_conditional_examples() {
        let mut rng = rng_from_seed(1);
        let r = GbRbm {
            weights: DenseMatrix::zeros(2, 2),
            visible_bias: vec![0.3, -1.0],
            hidden_bias: vec![0.0; 2],
            sigma: vec![1.0; 2],
        };
        let mean = r.visible_conditional(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), false, &mut rng).unwrap();
        assert_eq!(mean, m(&[&[0.3, -1.0], &[0.3, -1.0]]));

        let r = tiny(0.5, 0.3, 0.0, 2.0);
        let mean = r.visible_conditional(&m(&[&[1.0]]), false, &mut rng).unwrap();
        assert!((mean[(0, 0)] - 1.3).abs() < 1e-15);

        let n = 100_000;
        let h = DenseMatrix::filled(n, 1, 1.0);
        let draws = r.visible_conditional(&h, true, &mut rng).unwrap();
        let mu = draws.as_slice().iter().sum::<f64>() / n as f64;
        let var = draws.as_slice().iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
        assert!((mu - 1.3).abs() < 3.0 * 2.0 / (n as f64).sqrt());
        assert!((var - 4.0).abs() < 0.05 * 4.0);
    }

    #[test]
    fn cd_fixed_point_keeps_weights_small() {
        let mut rng = rng_from_seed(5);
        let data = DenseMatrix::from_fn(64, 3, |_, _| standard_normal(&mut rng) + 0.5);
        let mean: Vec<f64> = data.column_sums().iter().map(|s| s / 64.0).collect();
        let mut r = GbRbm::zeros(3, 4);
        r.visible_bias = mean;
        for _ in 0..200 {
            r.cd_update(&data, 1, 0.01, &mut rng).unwrap();
        }
        assert!(r.weights.frobenius_norm() < 0.05);
    }

    #[test]
    fn cd_zero_lr_is_noop_and_k_zero_rejected() {
        let mut rng = rng_from_seed(2);
        let data = DenseMatrix::from_fn(8, 3, |i, j| (i + j) as f64 * 0.1);
        let mut r = GbRbm::init(3, 5, 1);
        let before = r.clone();
        r.cd_update(&data, 1, 0.0, &mut rng).unwrap();
        assert_eq!(r, before);
        assert!(r.cd_update(&data, 0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn cd_memorizes_a_repeated_pattern() {
        let pattern = [1.5, -0.5, 2.0, 0.0, -1.0, 0.7];
        let data = DenseMatrix::from_fn(32, 6, |_, j| pattern[j]);
        let mut r = GbRbm::init(6, 8, 3);
        let mut rng = rng_from_seed(4);
        let first = r.cd_update(&data, 1, 0.01, &mut rng).unwrap();
        let mut last = first;
        for _ in 1..500 {
            last = r.cd_update(&data, 1, 0.01, &mut rng).unwrap();
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn scaler_round_trip_and_floor() {
        let z = DenseMatrix::from_fn(10, 3, |i, j| if j == 2 { 4.0 } else { (i * (j + 1)) as f64 * 0.7 - 1.0 });
        let s = Scaler::fit(&z);
        assert_eq!(s.std[2], STD_FLOOR);
        let back = s.inverse_transform(&s.transform(&z).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(z.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(s.transform(&DenseMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn train_rbm_edge_cases() {
        let z = DenseMatrix::from_fn(40, 4, |i, j| ((i * 4 + j) as f64).sin());
        let cfg = RbmTrainConfig {
            hidden_units: 6,
            epochs: 0,
            batch_size: 8,
            seed: 9,
            ..RbmTrainConfig::default()
        };
        let (rbm, scaler) = train_rbm(&z, &cfg).unwrap();
        assert_eq!(rbm, GbRbm::init(4, 6, derive_seed(9, &[0])));
        assert_eq!(scaler, Scaler::fit(&z));

        let cfg = RbmTrainConfig { epochs: 5, ..cfg };
        assert_eq!(train_rbm(&z, &cfg).unwrap(), train_rbm(&z, &cfg).unwrap());
        assert!(train_rbm(&z, &RbmTrainConfig { batch_size: 41, ..cfg }).is_err());
    }

    #[test]
    fn mean_field_reconstruction_is_pure() {
        let z = DenseMatrix::from_fn(30, 3, |i, j| ((i + 2 * j) as f64).cos());
        let cfg = RbmTrainConfig {
            hidden_units: 5,
            epochs: 3,
            batch_size: 10,
            ..RbmTrainConfig::default()
        };
        let (rbm, scaler) = train_rbm(&z, &cfg).unwrap();
        let a = reconstruct(&rbm, &scaler, &z, 1, false, 1).unwrap();
        let b = reconstruct(&rbm, &scaler, &z, 1, false, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), z.shape());
        assert!(reconstruct(&rbm, &scaler, &z, 0, false, 1).is_err());
    }
}
