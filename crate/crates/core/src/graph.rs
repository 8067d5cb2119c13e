//! CSR graph model with node features, labels and split masks.

use alloc::{format, vec, vec::Vec};

use rand::{seq::SliceRandom, Rng};

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::random::{derive_seed, rng_from_seed, standard_normal};

/// Sorted, duplicate-free set of node ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self(ids)
    }

    pub fn range(start: usize, end: usize) -> Self {
        Self((start..end).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        let mut ids = self.0.clone();
        ids.extend_from_slice(&other.0);
        NodeSet::new(ids)
    }

    pub fn is_disjoint(&self, other: &NodeSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => return false,
            }
        }
        true
    }

    /// Boolean membership mask of length `n`.
    pub fn to_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for id in self.iter().filter(|&id| id < n) {
            mask[id] = true;
        }
        mask
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        NodeSet::new(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitMasks {
    pub train: NodeSet,
    pub val: NodeSet,
    pub test: NodeSet,
}

impl SplitMasks {
    pub fn get(&self, split: Split) -> &NodeSet {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn validate(&self, num_nodes: usize) -> Result<()> {
        if !self.train.is_disjoint(&self.val)
            || !self.train.is_disjoint(&self.test)
            || !self.val.is_disjoint(&self.test)
        {
            return Err(Error::Integrity("split masks overlap".into()));
        }
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if let Some(&last) = set.as_slice().last() {
                if last >= num_nodes {
                    return Err(Error::Integrity(format!(
                        "{name} split references node {last} of {num_nodes}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Directed edge list stored as CSR, plus per-node features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    directed: bool,
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    split: SplitMasks,
}

impl Graph {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_nodes: usize,
        offsets: Vec<usize>,
        targets: Vec<usize>,
        directed: bool,
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        split: SplitMasks,
    ) -> Result<Self> {
        if offsets.len() != num_nodes + 1 {
            return Err(Error::Integrity(format!(
                "csr_offsets has length {}, expected {}",
                offsets.len(),
                num_nodes + 1
            )));
        }
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Integrity("csr_offsets must start at 0 and be non-decreasing".into()));
        }
        if offsets[num_nodes] != targets.len() {
            return Err(Error::Integrity(format!(
                "csr_offsets ends at {} but there are {} edges",
                offsets[num_nodes],
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= num_nodes) {
            return Err(Error::Integrity(format!("edge target {t} out of range")));
        }
        if features.rows() != num_nodes {
            return Err(Error::Integrity(format!(
                "features have {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Integrity("features contain non-finite values".into()));
        }
        if labels.len() != num_nodes {
            return Err(Error::Integrity(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Integrity(format!(
                "label {l} outside [0, {num_classes})"
            )));
        }
        split.validate(num_nodes)?;
        Ok(Self {
            num_nodes,
            offsets,
            targets,
            directed,
            features,
            labels,
            num_classes,
            split,
        })
    }

    /// Builds the CSR from an edge list; edges keep their relative order per source.
    #[allow(clippy::too_many_arguments)]
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        directed: bool,
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        split: SplitMasks,
    ) -> Result<Self> {
        let (offsets, targets) = build_csr(num_nodes, edges)?;
        Self::new(num_nodes, offsets, targets, directed, features, labels, num_classes, split)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> &SplitMasks {
        &self.split
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    /// All edges as `(source, target)` in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |v| self.out_neighbors(v).iter().map(move |&t| (v, t)))
    }

    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.edges().collect()
    }

    /// Number of distinct unordered non-self node pairs joined by an edge.
    pub fn num_undirected_edges(&self) -> usize {
        let adj = self.symmetric_neighbors();
        (0..self.num_nodes)
            .map(|v| adj[v].iter().filter(|&&u| u > v).count())
            .sum()
    }

    /// Sorted, de-duplicated neighbor lists of the symmetrized graph.
    /// A self-loop in the input makes a node its own neighbor.
    pub fn symmetric_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for (s, t) in self.edges() {
            adj[s].push(t);
            if s != t {
                adj[t].push(s);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Same node data, new edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Graph> {
        let (offsets, targets) = build_csr(self.num_nodes, edges)?;
        Ok(Graph {
            offsets,
            targets,
            ..self.clone()
        })
    }

    /// Same structure, new feature matrix.
    pub fn with_features(&self, features: DenseMatrix) -> Result<Graph> {
        if features.rows() != self.num_nodes {
            return Err(Error::Dimension {
                op: "with_features",
                detail: format!("{} rows for {} nodes", features.rows(), self.num_nodes),
            });
        }
        if !features.is_finite() {
            return Err(Error::Integrity("features contain non-finite values".into()));
        }
        Ok(Graph {
            features,
            ..self.clone()
        })
    }

    /// FNV-1a hash over structure, feature bits and labels.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.num_nodes as u64);
        for &o in &self.offsets {
            h.write_u64(o as u64);
        }
        for &t in &self.targets {
            h.write_u64(t as u64);
        }
        for &v in self.features.as_slice() {
            h.write_u64(v.to_bits());
        }
        for &l in &self.labels {
            h.write_u64(l as u64);
        }
        h.finish()
    }
}

/// 64-bit FNV-1a, used for content fingerprints and file checksums.
#[derive(Debug, Clone)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

fn build_csr(num_nodes: usize, edges: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut counts = vec![0usize; num_nodes + 1];
    for &(s, t) in edges {
        if s >= num_nodes || t >= num_nodes {
            return Err(Error::Integrity(format!(
                "edge ({s}, {t}) out of range for {num_nodes} nodes"
            )));
        }
        counts[s + 1] += 1;
    }
    for i in 0..num_nodes {
        counts[i + 1] += counts[i];
    }
    let offsets = counts.clone();
    let mut cursor = counts;
    let mut targets = vec![0; edges.len()];
    for &(s, t) in edges {
        targets[cursor[s]] = t;
        cursor[s] += 1;
    }
    Ok((offsets, targets))
}

/// Symmetric normalization `D^-1/2 Â D^-1/2` of the symmetrized adjacency.
///
/// `Â` is the binary symmetrized adjacency; with `add_self_loops` every
/// diagonal entry is set to 1 (existing self-loops are not doubled).
/// Zero-degree rows stay zero.
pub fn normalize_adjacency(g: &Graph, add_self_loops: bool) -> CsrMatrix {
    let mut adj = g.symmetric_neighbors();
    if add_self_loops {
        for (v, list) in adj.iter_mut().enumerate() {
            if let Err(pos) = list.binary_search(&v) {
                list.insert(pos, v);
            }
        }
    }
    let inv_sqrt: Vec<f64> = adj
        .iter()
        .map(|l| if l.is_empty() { 0.0 } else { 1.0 / libm::sqrt(l.len() as f64) })
        .collect();
    let mut offsets = Vec::with_capacity(g.num_nodes() + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    offsets.push(0);
    for (v, list) in adj.iter().enumerate() {
        for &u in list {
            indices.push(u);
            values.push(inv_sqrt[v] * inv_sqrt[u]);
        }
        offsets.push(indices.len());
    }
    CsrMatrix::new(g.num_nodes(), g.num_nodes(), offsets, indices, values)
        .expect("normalized adjacency is well-formed by construction")
}

/// Row-normalized symmetric neighbor operator: row v averages `N(v)`.
/// Empty neighborhoods give zero rows.
pub fn mean_aggregator(g: &Graph) -> CsrMatrix {
    let adj = g.symmetric_neighbors();
    let mut offsets = Vec::with_capacity(g.num_nodes() + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    offsets.push(0);
    for list in &adj {
        let w = 1.0 / list.len().max(1) as f64;
        for &u in list {
            indices.push(u);
            values.push(w);
        }
        offsets.push(indices.len());
    }
    CsrMatrix::new(g.num_nodes(), g.num_nodes(), offsets, indices, values)
        .expect("mean aggregator is well-formed by construction")
}

/// Parameters of the stochastic-block-model generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            num_nodes: 600,
            num_classes: 4,
            p_in: 0.05,
            p_out: 0.002,
            feature_dim: 16,
            feature_shift: 1.0,
            seed: 7,
        }
    }
}

/// Class of node `i` when `n` nodes are dealt into `c` equal blocks,
/// remainder to the last block.
pub fn sbm_block(i: usize, n: usize, c: usize) -> usize {
    (i / (n / c).max(1)).min(c - 1)
}

/// Generates an undirected SBM graph (both directions stored).
///
/// Node features are unit-variance Gaussians; feature dimension `k` carries a
/// mean of `feature_shift` for class `k mod C`. Splits are 60/20/20 over a
/// seeded node shuffle.
pub fn generate_sbm_graph(cfg: &SbmConfig) -> Result<Graph> {
    let SbmConfig {
        num_nodes: n,
        num_classes: c,
        p_in,
        p_out,
        feature_dim: d,
        feature_shift,
        seed,
    } = *cfg;
    if c == 0 || c > n {
        return Err(Error::Argument(format!(
            "num_classes {c} must be in [1, num_nodes={n}]"
        )));
    }
    if !(0.0..=1.0).contains(&p_out) || !(0.0..=1.0).contains(&p_in) || p_out > p_in {
        return Err(Error::Argument(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    let labels: Vec<usize> = (0..n).map(|i| sbm_block(i, n, c)).collect();

    let mut edge_rng = rng_from_seed(derive_seed(seed, &[1]));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if edge_rng.random::<f64>() < p {
                edges.push((i, j));
                edges.push((j, i));
            }
        }
    }

    let mut feat_rng = rng_from_seed(derive_seed(seed, &[2]));
    let mut features = DenseMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            let mean = if k % c == labels[i] { feature_shift } else { 0.0 };
            features[(i, k)] = mean + standard_normal(&mut feat_rng);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, &[3])));
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let split = SplitMasks {
        train: NodeSet::new(order[..n_train].to_vec()),
        val: NodeSet::new(order[n_train..n_train + n_val].to_vec()),
        test: NodeSet::new(order[n_train + n_val..].to_vec()),
    };
    Graph::from_edges(n, &edges, false, features, labels, c, split)
}
