//! Layer primitives: linear, graph convolution, mean-aggregating SAGE,
//! batch normalization, ReLU + inverted dropout and log-softmax NLL.

use alloc::{format, vec, vec::Vec};

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::graph::{mean_aggregator, Graph, NodeSet};
use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::random::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

fn check_linear(op: &'static str, x_cols: usize, w: &DenseMatrix, b: &[f64]) -> Result<()> {
    if x_cols != w.rows() {
        return Err(dim_err(op, format!("input has {x_cols} columns, weight has {} rows", w.rows())));
    }
    if b.len() != w.cols() {
        return Err(dim_err(op, format!("bias length {} for {} outputs", b.len(), w.cols())));
    }
    Ok(())
}

/// `XW + b`, bias broadcast per row.
pub fn dense_forward(x: &DenseMatrix, w: &DenseMatrix, b: &[f64]) -> Result<DenseMatrix> {
    check_linear("dense_forward", x.cols(), w, b)?;
    let mut out = x.matmul(w)?;
    out.add_row_vector(b)?;
    Ok(out)
}

/// `(A_norm · H) W + b`.
pub fn gcn_forward(
    h: &DenseMatrix,
    a_norm: &CsrMatrix,
    w: &DenseMatrix,
    b: &[f64],
) -> Result<DenseMatrix> {
    if a_norm.n_rows() != a_norm.n_cols() || a_norm.n_cols() != h.rows() {
        return Err(dim_err(
            "gcn_forward",
            format!(
                "propagation is {}x{} for {} node rows",
                a_norm.n_rows(),
                a_norm.n_cols(),
                h.rows()
            ),
        ));
    }
    check_linear("gcn_forward", h.cols(), w, b)?;
    dense_forward(&a_norm.spmm(h)?, w, b)
}

/// Per node `v`: `H[v]·W_self + mean_{u∈N(v)} H[u]·W_neigh + b` over the
/// symmetrized neighborhood.
pub fn sage_forward(
    h: &DenseMatrix,
    g: &Graph,
    w_self: &DenseMatrix,
    w_neigh: &DenseMatrix,
    b: &[f64],
) -> Result<DenseMatrix> {
    if h.rows() != g.num_nodes() {
        return Err(dim_err(
            "sage_forward",
            format!("{} rows for {} nodes", h.rows(), g.num_nodes()),
        ));
    }
    sage_forward_with(h, &mean_aggregator(g), w_self, w_neigh, b)
}

pub(crate) fn sage_forward_with(
    h: &DenseMatrix,
    mean_op: &CsrMatrix,
    w_self: &DenseMatrix,
    w_neigh: &DenseMatrix,
    b: &[f64],
) -> Result<DenseMatrix> {
    check_linear("sage_forward", h.cols(), w_self, b)?;
    check_linear("sage_forward", h.cols(), w_neigh, b)?;
    if mean_op.n_cols() != h.rows() {
        return Err(dim_err(
            "sage_forward",
            format!("aggregator has {} columns for {} rows", mean_op.n_cols(), h.rows()),
        ));
    }
    let mut out = dense_forward(h, w_self, b)?;
    out.add_assign(&mean_op.spmm(h)?.matmul(w_neigh)?)?;
    Ok(out)
}

/// Learned scale/shift plus running statistics of one batch-norm block.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the new batch statistic in the running update.
    pub momentum: f64,
    pub epsilon: f64,
}

/// Intermediates of a batch-norm forward pass needed for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub mode: Mode,
    pub normalized: DenseMatrix,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes without touching the running statistics.
    ///
    /// Train mode uses the biased batch variance, which is also what gets
    /// folded into the running variance.
    pub fn normalize(&self, z: &DenseMatrix, mode: Mode) -> Result<(DenseMatrix, BnCache)> {
        let f = self.features();
        if z.cols() != f {
            return Err(dim_err(
                "batchnorm_forward",
                format!("{} columns for {f} features", z.cols()),
            ));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if z.rows() < 2 {
                    return Err(Error::BatchSize {
                        op: "batchnorm_forward",
                        rows: z.rows(),
                    });
                }
                let n = z.rows() as f64;
                let mean: Vec<f64> = z.column_sums().into_iter().map(|s| s / n).collect();
                let mut var = vec![0.0; f];
                for row in z.iter_rows() {
                    for j in 0..f {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / libm::sqrt(v + self.epsilon))
            .collect();
        let normalized = DenseMatrix::from_fn(z.rows(), f, |i, j| (z[(i, j)] - mean[j]) * inv_std[j]);
        let out = DenseMatrix::from_fn(z.rows(), f, |i, j| {
            normalized[(i, j)] * self.gamma[j] + self.beta[j]
        });
        Ok((
            out,
            BnCache {
                mode,
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Folds batch statistics into the running estimates.
    pub fn absorb(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for j in 0..self.features() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j];
        }
    }

    /// Returns `(dZ, dgamma, dbeta)` for upstream gradient `dy`.
    pub fn backward(&self, cache: &BnCache, dy: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, Vec<f64>)> {
        let (n, f) = dy.shape();
        if cache.normalized.shape() != (n, f) {
            return Err(Error::State(format!(
                "batch-norm cache is {:?}, gradient is {:?}",
                cache.normalized.shape(),
                (n, f)
            )));
        }
        let mut dgamma = vec![0.0; f];
        let mut dbeta = vec![0.0; f];
        let mut sum_dxhat = vec![0.0; f];
        let mut sum_dxhat_xhat = vec![0.0; f];
        for i in 0..n {
            for j in 0..f {
                let g = dy[(i, j)];
                let xh = cache.normalized[(i, j)];
                dgamma[j] += g * xh;
                dbeta[j] += g;
                let dxh = g * self.gamma[j];
                sum_dxhat[j] += dxh;
                sum_dxhat_xhat[j] += dxh * xh;
            }
        }
        let dz = match cache.mode {
            Mode::Train => {
                let nf = n as f64;
                DenseMatrix::from_fn(n, f, |i, j| {
                    let dxh = dy[(i, j)] * self.gamma[j];
                    cache.inv_std[j] / nf
                        * (nf * dxh - sum_dxhat[j] - cache.normalized[(i, j)] * sum_dxhat_xhat[j])
                })
            }
            Mode::Infer => DenseMatrix::from_fn(n, f, |i, j| dy[(i, j)] * self.gamma[j] * cache.inv_std[j]),
        };
        Ok((dz, dgamma, dbeta))
    }
}

/// Batch normalization; train mode updates the running statistics.
pub fn batchnorm_forward(z: &DenseMatrix, state: &mut BatchNormState, mode: Mode) -> Result<DenseMatrix> {
    let (out, cache) = state.normalize(z, mode)?;
    if mode == Mode::Train {
        state.absorb(&cache.batch_mean, &cache.batch_var);
    }
    Ok(out)
}

/// Per-entry multipliers applied after ReLU (0 or `1/(1-p)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

impl DropoutMask {
    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn sample<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Self {
        if p <= 0.0 {
            return Self::ones(len);
        }
        let keep = 1.0 / (1.0 - p);
        Self((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
    }
}

/// ReLU followed by a dropout mask; returns the activation.
pub(crate) fn relu_masked(z: &DenseMatrix, mask: &DropoutMask) -> DenseMatrix {
    let mut out = z.map(|v| v.max(0.0));
    for (o, m) in out.as_mut_slice().iter_mut().zip(&mask.0) {
        *o *= m;
    }
    out
}

pub(crate) fn relu_masked_backward(z: &DenseMatrix, mask: &DropoutMask, da: &DenseMatrix) -> DenseMatrix {
    let mut dz = da.clone();
    for ((d, &zv), m) in dz.as_mut_slice().iter_mut().zip(z.as_slice()).zip(&mask.0) {
        *d = if zv > 0.0 { *d * m } else { 0.0 };
    }
    dz
}

/// ReLU, then inverted dropout in train mode.
pub fn activation_forward(
    z: &DenseMatrix,
    dropout_p: f64,
    mode: Mode,
    seed: u64,
) -> Result<(DenseMatrix, DropoutMask)> {
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::Argument(format!("dropout_p {dropout_p} outside [0,1)")));
    }
    let len = z.rows() * z.cols();
    let mask = match mode {
        Mode::Train => DropoutMask::sample(len, dropout_p, &mut rng_from_seed(seed)),
        Mode::Infer => DropoutMask::ones(len),
    };
    Ok((relu_masked(z, &mask), mask))
}

/// Row-wise numerically stable log-softmax.
pub fn log_softmax(z: &DenseMatrix) -> DenseMatrix {
    let mut out = z.clone();
    for i in 0..z.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Mean negative log-likelihood over `mask`; returns `(loss, log_probs)`.
pub fn log_softmax_nll(z3: &DenseMatrix, labels: &[usize], mask: &NodeSet) -> Result<(f64, DenseMatrix)> {
    if mask.is_empty() {
        return Err(Error::Argument("loss mask is empty".into()));
    }
    if labels.len() != z3.rows() {
        return Err(dim_err(
            "log_softmax_nll",
            format!("{} labels for {} rows", labels.len(), z3.rows()),
        ));
    }
    let log_probs = log_softmax(z3);
    let mut loss = 0.0;
    for v in mask.iter() {
        let (row, label) = (v, labels[v]);
        if row >= z3.rows() || label >= z3.cols() {
            return Err(dim_err(
                "log_softmax_nll",
                format!("row {row} / label {label} outside {:?}", z3.shape()),
            ));
        }
        loss -= log_probs[(row, label)];
    }
    Ok((loss / mask.len() as f64, log_probs))
}

/// Gradient of the masked mean NLL with respect to the logits.
pub fn nll_logit_grad(log_probs: &DenseMatrix, labels: &[usize], mask: &NodeSet) -> DenseMatrix {
    let mut grad = DenseMatrix::zeros(log_probs.rows(), log_probs.cols());
    let scale = 1.0 / mask.len().max(1) as f64;
    for v in mask.iter() {
        let row = grad.row_mut(v);
        for (j, g) in row.iter_mut().enumerate() {
            *g = libm::exp(log_probs[(v, j)]) * scale;
        }
        row[labels[v]] -= scale;
    }
    grad
}
