//! Test-time noise operators for features (X_c, X_z) and adjacency (A_c, A_z).
//!
//! Every operator distorts exactly `floor(n/100 · total)` units chosen
//! uniformly without replacement and never mutates its input.

use alloc::{format, vec::Vec};
use core::fmt;
use core::str::FromStr;

use rand::{seq::index::sample, Rng};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeSet, Split};
use crate::matrix::DenseMatrix;
use crate::random::rng_from_seed;

/// Distortion percentage in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(u32);

impl Percent {
    /// The eleven grid levels 0, 10, …, 100.
    pub const LEVELS: [u32; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

    pub fn new(n: u32) -> Result<Self> {
        if n > 100 {
            return Err(Error::Argument(format!("distortion percent {n} above 100")));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// `floor(n/100 · total)`.
    pub fn count_of(self, total: usize) -> usize {
        (total as u128 * self.0 as u128 / 100) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    /// Add U[0,1) to selected feature entries.
    Xc,
    /// Zero selected feature entries.
    Xz,
    /// Rewire edges of selected nodes to random pool nodes.
    Ac,
    /// Delete selected edges.
    Az,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Xc => "Xc",
            NoiseKind::Xz => "Xz",
            NoiseKind::Ac => "Ac",
            NoiseKind::Az => "Az",
        }
    }

    pub fn is_feature(self) -> bool {
        matches!(self, NoiseKind::Xc | NoiseKind::Xz)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Xc" | "xc" => Ok(NoiseKind::Xc),
            "Xz" | "xz" => Ok(NoiseKind::Xz),
            "Ac" | "ac" => Ok(NoiseKind::Ac),
            "Az" | "az" => Ok(NoiseKind::Az),
            other => Err(Error::Argument(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// Which nodes rewired edges may point to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pool {
    TrainOnly,
    TrainVal,
    Any,
}

impl Pool {
    pub fn nodes(self, g: &Graph) -> NodeSet {
        let s = g.split();
        match self {
            Pool::TrainOnly => s.train.clone(),
            Pool::TrainVal => s.train.union(&s.val),
            Pool::Any => NodeSet::range(0, g.num_nodes()),
        }
    }
}

/// Pool selection rule per distorted split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolPolicy {
    /// Time-split datasets: validation rewires into train, test into train ∪ val.
    SplitAware,
    /// Rewire into any node.
    Any,
}

impl PoolPolicy {
    pub fn pool_for(self, target: Split) -> Pool {
        match (self, target) {
            (PoolPolicy::Any, _) => Pool::Any,
            (PoolPolicy::SplitAware, Split::Test) => Pool::TrainVal,
            (PoolPolicy::SplitAware, _) => Pool::TrainOnly,
        }
    }
}

/// One noise operator applied to one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub percent: Percent,
    pub pool: Pool,
    pub target_split: Split,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, percent: u32, pool: Pool, target_split: Split, seed: u64) -> Result<Self> {
        if !percent.is_multiple_of(10) {
            return Err(Error::Argument(format!("noise percent {percent} is not a multiple of 10")));
        }
        if target_split == Split::Train {
            return Err(Error::Argument("the train split is never distorted".into()));
        }
        Ok(Self {
            kind,
            percent: Percent::new(percent)?,
            pool,
            target_split,
            seed,
        })
    }

    /// Applies the operator to its configured target split.
    pub fn apply(&self, g: &Graph) -> Result<Graph> {
        let target = g.split().get(self.target_split);
        match self.kind {
            NoiseKind::Xc => g.with_features(corrupt_features(g.features(), target, self.percent, self.seed)?),
            NoiseKind::Xz => g.with_features(blank_features(g.features(), target, self.percent, self.seed)?),
            NoiseKind::Ac => corrupt_adjacency(g, target, self.percent, &self.pool.nodes(g), self.seed),
            NoiseKind::Az => blank_adjacency(g, &incident_edges(g, target), self.percent, self.seed),
        }
    }
}

fn select_entries(x: &DenseMatrix, target_rows: &NodeSet, percent: Percent, seed: u64) -> Result<Vec<(usize, usize)>> {
    let cols = x.cols();
    if let Some(&r) = target_rows.as_slice().last() {
        if r >= x.rows() {
            return Err(Error::Argument(format!("target row {r} outside {} rows", x.rows())));
        }
    }
    let total = target_rows.len() * cols;
    let k = percent.count_of(total);
    let mut rng = rng_from_seed(seed);
    let rows = target_rows.as_slice();
    let mut picked: Vec<usize> = sample(&mut rng, total, k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|e| (rows[e / cols], e % cols)).collect())
}

/// Adds U[0,1) to exactly `floor(n% · |target entries|)` entries of the target rows.
pub fn corrupt_features(x: &DenseMatrix, target_rows: &NodeSet, percent: Percent, seed: u64) -> Result<DenseMatrix> {
    let picks = select_entries(x, target_rows, percent, seed)?;
    let mut noise_rng = rng_from_seed(crate::random::derive_seed(seed, &[1]));
    let mut out = x.clone();
    for (r, c) in picks {
        out[(r, c)] += noise_rng.random::<f64>();
    }
    Ok(out)
}

/// Zeroes exactly `floor(n% · |target entries|)` entries of the target rows.
pub fn blank_features(x: &DenseMatrix, target_rows: &NodeSet, percent: Percent, seed: u64) -> Result<DenseMatrix> {
    let picks = select_entries(x, target_rows, percent, seed)?;
    let mut out = x.clone();
    for (r, c) in picks {
        out[(r, c)] = 0.0;
    }
    Ok(out)
}

/// Indices (CSR order) of edges with at least one endpoint in `nodes`.
pub fn incident_edges(g: &Graph, nodes: &NodeSet) -> Vec<usize> {
    let mask = nodes.to_mask(g.num_nodes());
    g.edges()
        .enumerate()
        .filter(|(_, (s, t))| mask[*s] || mask[*t])
        .map(|(i, _)| i)
        .collect()
}

/// Nodes chosen for rewiring: `floor(n% · |target|)` uniform draws without replacement.
pub fn rewire_selection<R: Rng + ?Sized>(target_nodes: &NodeSet, percent: Percent, rng: &mut R) -> NodeSet {
    let k = percent.count_of(target_nodes.len());
    sample(rng, target_nodes.len(), k)
        .into_iter()
        .map(|i| target_nodes.as_slice()[i])
        .collect()
}

/// Rewires every edge incident to `floor(n% · |target|)` selected target
/// nodes: the selected endpoint stays, the other endpoint becomes a uniform
/// draw from `pool` (never the selected node itself). Edge count is preserved.
pub fn corrupt_adjacency(g: &Graph, target_nodes: &NodeSet, percent: Percent, pool: &NodeSet, seed: u64) -> Result<Graph> {
    if pool.is_empty() {
        return Err(Error::Argument("rewiring pool is empty".into()));
    }
    let mut rng = rng_from_seed(seed);
    let chosen = rewire_selection(target_nodes, percent, &mut rng);
    if chosen.is_empty() {
        return Ok(g.clone());
    }
    let selected = chosen.to_mask(g.num_nodes());
    let pool_ids = pool.as_slice();
    let draw_excluding = |anchor: usize, rng: &mut crate::random::SeededRng| -> Option<usize> {
        if pool_ids.len() == 1 && pool_ids[0] == anchor {
            return None;
        }
        loop {
            let cand = pool_ids[rng.random_range(0..pool_ids.len())];
            if cand != anchor {
                return Some(cand);
            }
        }
    };
    let mut edges = g.edge_list();
    for e in edges.iter_mut() {
        let (s, t) = *e;
        if selected[s] {
            if let Some(r) = draw_excluding(s, &mut rng) {
                *e = (s, r);
            }
        } else if selected[t] {
            if let Some(r) = draw_excluding(t, &mut rng) {
                *e = (r, t);
            }
        }
    }
    g.with_edges(&edges)
}

/// Removes exactly `floor(n% · |target edges|)` of the given edges
/// (indices into CSR order), chosen uniformly without replacement.
pub fn blank_adjacency(g: &Graph, target_edges: &[usize], percent: Percent, seed: u64) -> Result<Graph> {
    if let Some(&e) = target_edges.iter().find(|&&e| e >= g.num_edges()) {
        return Err(Error::Argument(format!("edge index {e} outside {} edges", g.num_edges())));
    }
    let k = percent.count_of(target_edges.len());
    if k == 0 {
        return Ok(g.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut removed = alloc::vec![false; g.num_edges()];
    for i in sample(&mut rng, target_edges.len(), k) {
        removed[target_edges[i]] = true;
    }
    let kept: Vec<(usize, usize)> = g
        .edges()
        .enumerate()
        .filter(|(i, _)| !removed[*i])
        .map(|(_, e)| e)
        .collect();
    g.with_edges(&kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SplitMasks;

    fn p(n: u32) -> Percent {
        Percent::new(n).unwrap()
    }

    fn graph(n: usize, edges: &[(usize, usize)], split: SplitMasks) -> Graph {
        let feats = DenseMatrix::from_fn(n, 4, |i, j| (i * 4 + j) as f64 + 0.25);
        Graph::from_edges(n, edges, true, feats, alloc::vec![0; n], 1, split).unwrap()
    }

    #[test]
    fn feature_operator_examples() {
        let x = DenseMatrix::from_fn(5, 4, |i, j| (i + j) as f64 + 1.0);
        let rows = NodeSet::new(alloc::vec![1, 3]);
        assert_eq!(corrupt_features(&x, &rows, p(0), 1).unwrap(), x);
        assert_eq!(blank_features(&x, &rows, p(0), 1).unwrap(), x);

        let full = corrupt_features(&x, &rows, p(100), 2).unwrap();
        for r in 0..5 {
            for c in 0..4 {
                let d = full[(r, c)] - x[(r, c)];
                if rows.contains(r) {
                    assert!((0.0..1.0).contains(&d));
                } else {
                    assert_eq!(d, 0.0);
                }
            }
        }
        let half = corrupt_features(&x, &rows, p(50), 3).unwrap();
        let changed = half.as_slice().iter().zip(x.as_slice()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 4);

        let blanked = blank_features(&x, &rows, p(100), 4).unwrap();
        assert!(blanked.row(1).iter().chain(blanked.row(3)).all(|&v| v == 0.0));
    }

    #[test]
    fn blank_features_count_with_existing_zeros() {
        let x = DenseMatrix::from_fn(3, 10, |i, j| if (i + j) % 4 == 0 { 0.0 } else { 1.0 });
        let rows = NodeSet::range(0, 3);
        let out = blank_features(&x, &rows, p(30), 5).unwrap();
        let picks = select_entries(&x, &rows, p(30), 5).unwrap();
        assert_eq!(picks.len(), 9);
        for (r, c) in picks {
            assert_eq!(out[(r, c)], 0.0);
        }
    }

    #[test]
    fn corrupt_adjacency_examples() {
        let split = SplitMasks {
            train: NodeSet::range(0, 5),
            val: NodeSet::range(5, 15),
            test: NodeSet::default(),
        };
        let edges: Vec<(usize, usize)> = (0..15).map(|i| (i, (i + 1) % 15)).chain((0..15).map(|i| (i, (i + 7) % 15))).collect();
        let g = graph(15, &edges, split);
        let val = g.split().val.clone();
        let pool = Pool::Any.nodes(&g);
        assert_eq!(corrupt_adjacency(&g, &val, p(0), &pool, 1).unwrap(), g);

        let out = corrupt_adjacency(&g, &val, p(30), &pool, 2).unwrap();
        assert_eq!(out.num_edges(), g.num_edges());
        assert_eq!(rewire_selection(&val, p(30), &mut rng_from_seed(2)).len(), 3);

        // Forced pool: the rewritten edge multiset is known exactly.
        let single = NodeSet::new(alloc::vec![0]);
        let forced = corrupt_adjacency(&g, &val, p(100), &single, 3).unwrap();
        let mut expected: Vec<(usize, usize)> = g
            .edges()
            .map(|(s, t)| {
                if val.contains(s) {
                    (s, 0)
                } else if val.contains(t) {
                    (0, t)
                } else {
                    (s, t)
                }
            })
            .collect();
        expected.sort_unstable();
        let mut got = forced.edge_list();
        got.sort_unstable();
        assert_eq!(got, expected);
        assert!(matches!(
            corrupt_adjacency(&g, &val, p(10), &NodeSet::default(), 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn blank_adjacency_examples() {
        let edges: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
        let g = graph(10, &edges, SplitMasks::default());
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(blank_adjacency(&g, &all, p(0), 1).unwrap(), g);
        assert_eq!(blank_adjacency(&g, &all, p(100), 1).unwrap().num_edges(), 0);
        let out = blank_adjacency(&g, &all, p(30), 2).unwrap();
        assert_eq!(out.num_edges(), 7);
        assert_eq!(out.num_nodes(), 10);
    }

    #[test]
    fn operators_are_pure_and_seeded() {
        let x = DenseMatrix::from_fn(6, 5, |i, j| (i * j) as f64);
        let rows = NodeSet::range(2, 6);
        let a = corrupt_features(&x, &rows, p(40), 9).unwrap();
        let b = corrupt_features(&x, &rows, p(40), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, corrupt_features(&x, &rows, p(40), 10).unwrap());
    }

    #[test]
    fn noise_spec_validation() {
        assert!(NoiseSpec::new(NoiseKind::Xc, 15, Pool::Any, Split::Val, 0).is_err());
        assert!(NoiseSpec::new(NoiseKind::Xc, 110, Pool::Any, Split::Val, 0).is_err());
        assert!(NoiseSpec::new(NoiseKind::Xc, 10, Pool::Any, Split::Train, 0).is_err());
        assert!(NoiseSpec::new(NoiseKind::Az, 100, Pool::Any, Split::Test, 0).is_ok());
    }

    #[test]
    fn pool_policy_matches_time_split_rules() {
        assert_eq!(PoolPolicy::SplitAware.pool_for(Split::Val), Pool::TrainOnly);
        assert_eq!(PoolPolicy::SplitAware.pool_for(Split::Test), Pool::TrainVal);
        assert_eq!(PoolPolicy::Any.pool_for(Split::Val), Pool::Any);
    }
}
