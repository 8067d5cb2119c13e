//! node2vec: second-order biased random walks and skip-gram with negative sampling.

use alloc::{format, vec, vec::Vec};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::random::{derive_seed, logistic, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    /// Return parameter; larger values discourage stepping back.
    pub p: f64,
    /// In-out parameter; larger values keep walks local.
    pub q: f64,
    pub window: usize,
    pub embedding_dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            walks_per_node: 10,
            walk_length: 40,
            p: 1.0,
            q: 1.0,
            window: 5,
            embedding_dim: 64,
            negatives: 5,
            epochs: 1,
            lr: 0.025,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) || !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("node2vec p={} q={} must be positive", self.p, self.q)));
        }
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be at least 2".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("skip-gram lr {} invalid", self.lr)));
        }
        Ok(())
    }
}

/// Walk corpus plus the isolated nodes that produced no walks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Walks {
    pub walks: Vec<Vec<usize>>,
    pub skipped: Vec<usize>,
    pub num_nodes: usize,
}

/// Draws one walk of at most `len` nodes from `start` over symmetric neighbor lists.
pub fn biased_walk<R: Rng + ?Sized>(nbrs: &[Vec<usize>], start: usize, len: usize, p: f64, q: f64, rng: &mut R) -> Vec<usize> {
    let mut walk = Vec::with_capacity(len);
    walk.push(start);
    let mut weights = Vec::new();
    while walk.len() < len {
        let cur = walk[walk.len() - 1];
        let cand = &nbrs[cur];
        if cand.is_empty() {
            break;
        }
        let next = if walk.len() == 1 {
            cand[rng.random_range(0..cand.len())]
        } else {
            let prev = walk[walk.len() - 2];
            let prev_nbrs = &nbrs[prev];
            weights.clear();
            weights.extend(cand.iter().map(|&x| {
                if x == prev {
                    1.0 / p
                } else if prev_nbrs.binary_search(&x).is_ok() {
                    1.0
                } else {
                    1.0 / q
                }
            }));
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = cand.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            cand[pick]
        };
        walk.push(next);
    }
    walk
}

/// `walks_per_node` walks from every non-isolated node, node-major order.
/// Walk `r` from node `v` uses seed `derive(seed, [v, r])`.
pub fn generate_walks(g: &Graph, cfg: &WalkConfig) -> Result<Walks> {
    cfg.validate()?;
    let nbrs = g.symmetric_neighbors();
    let mut walks = Vec::new();
    let mut skipped = Vec::new();
    for v in 0..g.num_nodes() {
        if nbrs[v].is_empty() {
            skipped.push(v);
            continue;
        }
        for r in 0..cfg.walks_per_node {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, &[v as u64, r as u64]));
            walks.push(biased_walk(&nbrs, v, cfg.walk_length, cfg.p, cfg.q, &mut rng));
        }
    }
    Ok(Walks {
        walks,
        skipped,
        num_nodes: g.num_nodes(),
    })
}

/// Initial input vectors: U(-0.5/d, 0.5/d) for walked nodes, zero for skipped ones.
fn init_embeddings(walks: &Walks, dim: usize, seed: u64) -> DenseMatrix {
    let mut rng = rng_from_seed(derive_seed(seed, &[0x5e]));
    let mut seen = vec![false; walks.num_nodes];
    for w in &walks.walks {
        for &v in w {
            seen[v] = true;
        }
    }
    let scale = 1.0 / dim as f64;
    DenseMatrix::from_fn(walks.num_nodes, dim, |i, _| {
        let u = rng.random::<f64>();
        if seen[i] {
            (u - 0.5) * scale
        } else {
            0.0
        }
    })
}

/// Skip-gram with negative sampling over every (center, context) pair within
/// `window` positions. Negatives come from the unigram^0.75 distribution.
pub fn train_skipgram(walks: &Walks, cfg: &WalkConfig) -> Result<DenseMatrix> {
    cfg.validate()?;
    if walks.walks.is_empty() {
        return Err(Error::Argument("skip-gram needs at least one walk".into()));
    }
    let n = walks.num_nodes;
    let d = cfg.embedding_dim;
    let mut emb = init_embeddings(walks, d, cfg.seed);
    if cfg.epochs == 0 {
        return Ok(emb);
    }
    let mut counts = vec![0.0f64; n];
    for w in &walks.walks {
        for &v in w {
            if v >= n {
                return Err(Error::Argument(format!("walk node {v} outside {n} nodes")));
            }
            counts[v] += 1.0;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&c| libm::pow(c, 0.75)).collect();
    let table = WeightedIndex::new(&weights).map_err(|e| Error::Argument(format!("negative table: {e}")))?;
    let mut ctx = DenseMatrix::zeros(n, d);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[0x56]));
    let mut grad = vec![0.0; d];

    let update = |center: usize, target: usize, label: f64, emb: &mut DenseMatrix, ctx: &mut DenseMatrix, grad: &mut [f64]| {
        let e = emb.row(center);
        let c = ctx.row(target);
        let dot: f64 = e.iter().zip(c).map(|(a, b)| a * b).sum();
        let g = cfg.lr * (label - logistic(dot));
        for k in 0..d {
            grad[k] += g * c[k];
        }
        let c = ctx.row_mut(target);
        let e = emb.row(center);
        for k in 0..d {
            c[k] += g * e[k];
        }
    };

    for _ in 0..cfg.epochs {
        for w in &walks.walks {
            for (i, &center) in w.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(w.len());
                for (j, &context) in w[lo..hi].iter().enumerate() {
                    if lo + j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    update(center, context, 1.0, &mut emb, &mut ctx, &mut grad);
                    for _ in 0..cfg.negatives {
                        let neg = table.sample(&mut rng);
                        if neg == context {
                            continue;
                        }
                        update(center, neg, 0.0, &mut emb, &mut ctx, &mut grad);
                    }
                    for (e, g) in emb.row_mut(center).iter_mut().zip(&grad) {
                        *e += g;
                    }
                }
            }
        }
    }
    if !emb.is_finite() {
        return Err(Error::NonFinite("skip-gram embeddings".into()));
    }
    Ok(emb)
}

/// Walks then skip-gram on the given (clean) graph.
pub fn node2vec(g: &Graph, cfg: &WalkConfig) -> Result<(DenseMatrix, Vec<usize>)> {
    let walks = generate_walks(g, cfg)?;
    if walks.walks.is_empty() {
        return Ok((DenseMatrix::zeros(g.num_nodes(), cfg.embedding_dim), walks.skipped));
    }
    let emb = train_skipgram(&walks, cfg)?;
    Ok((emb, walks.skipped))
}

/// `[X | E]`, raw features first.
pub fn compose_features(x: &DenseMatrix, e: &DenseMatrix) -> Result<DenseMatrix> {
    x.hcat(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SplitMasks;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(n, edges, false, DenseMatrix::zeros(n, 1), vec![0; n], 1, SplitMasks::default()).unwrap()
    }

    fn cfg() -> WalkConfig {
        WalkConfig {
            walks_per_node: 5,
            walk_length: 4,
            ..WalkConfig::default()
        }
    }

    #[test]
    fn single_edge_alternates() {
        let g = graph(2, &[(0, 1)]);
        let w = generate_walks(&g, &cfg()).unwrap();
        assert_eq!(w.walks.len(), 10);
        for walk in &w.walks {
            assert!(walk == &[0, 1, 0, 1] || walk == &[1, 0, 1, 0]);
        }
    }

    #[test]
    fn first_step_is_uniform_on_a_path() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let nbrs = g.symmetric_neighbors();
        let mut rng = rng_from_seed(11);
        let trials = 10_000;
        let zeros = (0..trials)
            .filter(|_| biased_walk(&nbrs, 1, 2, 1.0, 1.0, &mut rng)[1] == 0)
            .count() as f64;
        let sigma = (trials as f64 * 0.25).sqrt();
        assert!((zeros - trials as f64 * 0.5).abs() <= 3.0 * sigma);
    }

    #[test]
    fn return_bias_follows_p_and_q() {
        // 0-1-2 path plus 1-3; from (0 -> 1) the weights are 1/p for 0 and 1/q for 2, 3.
        let g = graph(4, &[(0, 1), (1, 2), (1, 3)]);
        let nbrs = g.symmetric_neighbors();
        let mut rng = rng_from_seed(3);
        let (p, q) = (0.25, 4.0);
        let trials = 20_000;
        let mut back = 0usize;
        for _ in 0..trials {
            let full = biased_walk(&nbrs, 0, 3, p, q, &mut rng);
            if full[2] == 0 {
                back += 1;
            }
        }
        let expect = (1.0 / p) / (1.0 / p + 2.0 / q);
        let sigma = (trials as f64 * expect * (1.0 - expect)).sqrt();
        assert!((back as f64 - trials as f64 * expect).abs() <= 4.0 * sigma);
    }

    #[test]
    fn isolated_nodes_are_skipped() {
        let g = graph(4, &[]);
        let w = generate_walks(&g, &cfg()).unwrap();
        assert!(w.walks.is_empty());
        assert_eq!(w.skipped, vec![0, 1, 2, 3]);
        assert!(matches!(train_skipgram(&w, &cfg()), Err(Error::Argument(_))));
    }

    #[test]
    fn walks_follow_symmetrized_edges() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 0), (3, 4)]);
        let nbrs = g.symmetric_neighbors();
        let c = WalkConfig { p: 0.5, q: 2.0, walk_length: 12, ..cfg() };
        let w = generate_walks(&g, &c).unwrap();
        assert_eq!(w.skipped, vec![5]);
        for walk in &w.walks {
            assert!(walk.len() == 12);
            for pair in walk.windows(2) {
                assert!(nbrs[pair[0]].contains(&pair[1]));
            }
        }
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn cliques_separate() {
        let mut edges = Vec::new();
        for base in [0, 6] {
            for i in 0..6 {
                for j in i + 1..6 {
                    edges.push((base + i, base + j));
                }
            }
        }
        let g = graph(12, &edges);
        let c = WalkConfig {
            walks_per_node: 20,
            walk_length: 20,
            embedding_dim: 8,
            epochs: 3,
            seed: 5,
            ..WalkConfig::default()
        };
        let (e, skipped) = node2vec(&g, &c).unwrap();
        assert!(skipped.is_empty());
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for i in 0..12 {
            for j in i + 1..12 {
                let s = cosine(e.row(i), e.row(j));
                if (i < 6) == (j < 6) {
                    within += s;
                    nw += 1;
                } else {
                    across += s;
                    na += 1;
                }
            }
        }
        assert!(within / nw as f64 - across / na as f64 >= 0.2);
    }

    #[test]
    fn zero_epochs_return_initialization_and_seed_is_deterministic() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3)]);
        let c0 = WalkConfig { epochs: 0, embedding_dim: 4, ..cfg() };
        let walks = generate_walks(&g, &c0).unwrap();
        let init = train_skipgram(&walks, &c0).unwrap();
        assert_eq!(init, init_embeddings(&walks, 4, c0.seed));
        assert!(init.row(4).iter().all(|&v| v == 0.0));
        let c1 = WalkConfig { epochs: 2, ..c0 };
        let a = train_skipgram(&walks, &c1).unwrap();
        assert_eq!(a, train_skipgram(&walks, &c1).unwrap());
        assert!(a.row(4).iter().all(|&v| v == 0.0));
        assert_ne!(a, init);
    }

    #[test]
    fn compose_examples() {
        let x = DenseMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let e = DenseMatrix::from_fn(2, 2, |i, j| 10.0 + (i * 2 + j) as f64);
        let c = compose_features(&x, &e).unwrap();
        assert_eq!(c.shape(), (2, 5));
        assert_eq!(c.row(1), &[3.0, 4.0, 5.0, 12.0, 13.0]);
        let z = compose_features(&x, &DenseMatrix::zeros(2, 2)).unwrap();
        assert_eq!(&z.row(0)[3..], &[0.0, 0.0]);
        assert_eq!(compose_features(&DenseMatrix::zeros(2, 0), &e).unwrap(), e);
        assert!(matches!(
            compose_features(&x, &DenseMatrix::zeros(3, 2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(WalkConfig { p: 0.0, ..cfg() }.validate().is_err());
        assert!(WalkConfig { walk_length: 1, ..cfg() }.validate().is_err());
        assert!(WalkConfig { embedding_dim: 0, ..cfg() }.validate().is_err());
    }
}
