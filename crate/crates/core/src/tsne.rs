//! Exact O(n²) t-SNE, PCA pre-reduction and the silhouette score.

use alloc::{format, vec, vec::Vec};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::random::{rng_from_seed, standard_normal};

/// Starting layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsneInit {
    /// First two principal components scaled to std 1e-4; identical rows start identical.
    Pca,
    /// Gaussian with std 1e-4 drawn from the seed.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// Step size; `None` picks `n / exaggeration / 4`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    /// Iterations with exaggerated P and momentum 0.5.
    pub exaggeration_iters: usize,
    /// Inputs wider than this are PCA-reduced first.
    pub pca_dims: usize,
    /// KL is recorded every this many iterations (and at 0 and the end).
    pub kl_every: usize,
    pub init: TsneInit,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            pca_dims: 50,
            kl_every: 50,
            init: TsneInit::Pca,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub coords: DenseMatrix,
    /// `(iteration, KL(P‖Q))` with the unexaggerated P.
    pub kl_trace: Vec<(usize, f64)>,
}

fn squared_distances(z: &DenseMatrix) -> Vec<f64> {
    let n = z.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row-conditional Gaussian affinities with per-row precision found by
/// bisection so that each row's perplexity matches the target.
/// Returns the n×n row-stochastic matrix and the achieved perplexities.
pub fn conditional_affinities(z: &DenseMatrix, perplexity: f64) -> Result<(DenseMatrix, Vec<f64>)> {
    let n = z.rows();
    check_perplexity(n, perplexity)?;
    let d = squared_distances(z);
    let target = libm::log(perplexity);
    let mut p = DenseMatrix::zeros(n, n);
    let mut achieved = vec![0.0; n];
    for i in 0..n {
        let di = &d[i * n..(i + 1) * n];
        let min_d = di
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut row = vec![0.0; n];
        let mut entropy = 0.0;
        for _ in 0..200 {
            entropy = row_entropy(di, i, beta, min_d, &mut row);
            let diff = entropy - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        achieved[i] = libm::exp(entropy);
        p.row_mut(i).copy_from_slice(&row);
    }
    Ok((p, achieved))
}

/// Fills `row` with normalized exp(−β(d−d_min)) and returns its Shannon entropy (nats).
fn row_entropy(d: &[f64], i: usize, beta: f64, min_d: f64, row: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (j, r) in row.iter_mut().enumerate() {
        *r = if j == i { 0.0 } else { libm::exp(-beta * (d[j] - min_d)) };
        sum += *r;
    }
    let mut h = 0.0;
    for (j, r) in row.iter_mut().enumerate() {
        *r /= sum;
        if j != i && *r > 0.0 {
            h -= *r * libm::log(*r);
        }
    }
    h
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if !(perplexity >= 2.0) || (n as f64) < 3.0 * perplexity {
        return Err(Error::Argument(format!(
            "perplexity {perplexity} needs perplexity >= 2 and at least {} rows, got {n}",
            libm::ceil(3.0 * perplexity)
        )));
    }
    Ok(())
}

/// Symmetrized joint P = (P_{j|i} + P_{i|j}) / 2n, floored at 1e-12.
pub fn joint_affinities(conditional: &DenseMatrix) -> DenseMatrix {
    let n = conditional.rows();
    let denom = 2.0 * n as f64;
    DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            ((conditional[(i, j)] + conditional[(j, i)]) / denom).max(1e-12)
        }
    })
}

/// Student-t kernel (1+|yᵢ−yⱼ|²)⁻¹ with zero diagonal, plus its sum.
fn student_kernel(y: &DenseMatrix) -> (Vec<f64>, f64) {
    let n = y.rows();
    let d = squared_distances(y);
    let mut w = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = 1.0 / (1.0 + d[i * n + j]);
                w[i * n + j] = v;
                sum += v;
            }
        }
    }
    (w, sum)
}

/// KL(P‖Q) for joint P and embedding Y.
pub fn kl_divergence(p: &DenseMatrix, y: &DenseMatrix) -> f64 {
    let n = y.rows();
    let (w, sum) = student_kernel(y);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[(i, j)];
            if i != j && pij > 0.0 {
                let q = (w[i * n + j] / sum).max(1e-300);
                kl += pij * libm::log(pij / q);
            }
        }
    }
    kl
}

/// ∂KL/∂yᵢ = 4 Σⱼ (pᵢⱼ − qᵢⱼ)(yᵢ − yⱼ)(1+|yᵢ−yⱼ|²)⁻¹.
pub fn tsne_gradient(p: &DenseMatrix, y: &DenseMatrix) -> DenseMatrix {
    let n = y.rows();
    let dims = y.cols();
    let (w, sum) = student_kernel(y);
    let mut g = DenseMatrix::zeros(n, dims);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let wij = w[i * n + j];
            let coef = 4.0 * (p[(i, j)] - wij / sum) * wij;
            for k in 0..dims {
                g[(i, k)] += coef * (y[(i, k)] - y[(j, k)]);
            }
        }
    }
    g
}

/// Projection onto the top `k` principal components (centered).
pub fn pca(z: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    let (n, d) = z.shape();
    if k == 0 || k > d {
        return Err(Error::Argument(format!("cannot keep {k} of {d} components")));
    }
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, k));
    }
    let means: Vec<f64> = z.column_sums().into_iter().map(|s| s / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| z[(i, j)] - means[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = DenseMatrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // Sign fixed so the largest-magnitude loading is positive.
        let pivot = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[(i, c)] = sign * (0..d).map(|j| centered[(i, j)] * v[j]).sum::<f64>();
        }
    }
    Ok(out)
}

fn initial_layout(input: &DenseMatrix, cfg: &TsneConfig) -> Result<DenseMatrix> {
    let n = input.rows();
    let mut rng = rng_from_seed(cfg.seed);
    let random = |rng: &mut crate::random::SeededRng| DenseMatrix::from_fn(n, 2, |_, _| 1e-4 * standard_normal(rng));
    if cfg.init == TsneInit::Random || input.cols() < 2 {
        return Ok(random(&mut rng));
    }
    let mut y = pca(input, 2)?;
    let std0 = libm::sqrt(y.iter_rows().map(|r| r[0] * r[0]).sum::<f64>() / n as f64);
    if std0 <= 0.0 {
        return Ok(random(&mut rng));
    }
    let scale = 1e-4 / std0;
    y.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    Ok(y)
}

/// Exact t-SNE to two dimensions.
pub fn tsne_embed(z: &DenseMatrix, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = z.rows();
    check_perplexity(n, cfg.perplexity)?;
    if !z.is_finite() {
        return Err(Error::NonFinite("t-SNE input".into()));
    }
    let reduced;
    let input = if z.cols() > cfg.pca_dims {
        reduced = pca(z, cfg.pca_dims)?;
        &reduced
    } else {
        z
    };
    let (cond, _) = conditional_affinities(input, cfg.perplexity)?;
    let p = joint_affinities(&cond);
    let p_exag = p.map(|v| v * cfg.early_exaggeration);

    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| n as f64 / cfg.early_exaggeration.max(1.0) / 4.0);
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Argument(format!("t-SNE learning rate {lr} invalid")));
    }
    let mut y = initial_layout(input, cfg)?;
    let mut velocity = DenseMatrix::zeros(n, 2);
    let mut gains = DenseMatrix::filled(n, 2, 1.0);
    let mut kl_trace = vec![(0, kl_divergence(&p, &y))];

    for it in 0..cfg.iterations {
        let early = it < cfg.exaggeration_iters;
        let grad = tsne_gradient(if early { &p_exag } else { &p }, &y);
        let momentum = if early { 0.5 } else { 0.8 };
        for idx in 0..n * 2 {
            let gr = grad.as_slice()[idx];
            let vel = velocity.as_slice()[idx];
            let gain = &mut gains.as_mut_slice()[idx];
            *gain = if (gr > 0.0) != (vel > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
            let v = momentum * vel - lr * *gain * gr;
            velocity.as_mut_slice()[idx] = v;
            y.as_mut_slice()[idx] += v;
        }
        let means: Vec<f64> = y.column_sums().into_iter().map(|s| s / n as f64).collect();
        for row in 0..n {
            for c in 0..2 {
                y[(row, c)] -= means[c];
            }
        }
        let done = it + 1;
        if (cfg.kl_every > 0 && done % cfg.kl_every == 0) || done == cfg.iterations {
            kl_trace.push((done, kl_divergence(&p, &y)));
        }
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("t-SNE coordinates".into()));
    }
    Ok(TsneResult { coords: y, kl_trace })
}

/// Mean silhouette coefficient of `coords` under `labels` (Euclidean).
/// Points alone in their cluster contribute 0.
pub fn silhouette_score(coords: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    let n = coords.rows();
    if labels.len() != n {
        return Err(Error::Dimension {
            op: "silhouette",
            detail: format!("{} labels for {n} points", labels.len()),
        });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Argument("silhouette needs at least two clusters".into()));
    }
    let dist = |i: usize, j: usize| -> f64 {
        libm::sqrt(coords.row(i).iter().zip(coords.row(j)).map(|(a, b)| (a - b) * (a - b)).sum())
    };
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
            }
        }
        let own = labels[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}
