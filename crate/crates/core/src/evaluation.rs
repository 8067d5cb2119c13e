//! Accuracy, per-cell noisy evaluation and the (n_X × n_A) accuracy grids.

use alloc::{format, string::String, vec::Vec};
use core::fmt;
use core::str::FromStr;

use crate::distortion::{NoiseKind, NoiseSpec, Percent, PoolPolicy};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeSet, Split};
use crate::nn::{Arch, Propagation, Tap};
use crate::pipeline::{forward_phi_with, run_psi_from, PsiBundle};
use crate::random::derive_seed;

/// Number of noise levels per axis (0, 10, …, 100).
pub const GRID_SIZE: usize = 11;

/// Fraction of `mask` nodes whose prediction equals the label.
pub fn accuracy(predictions: &[usize], labels: &[usize], mask: &NodeSet) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Argument("accuracy over an empty mask".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            op: "accuracy",
            detail: format!("{} predictions for {} labels", predictions.len(), labels.len()),
        });
    }
    let mut hits = 0usize;
    for v in mask.iter() {
        if v >= labels.len() {
            return Err(Error::Argument(format!("mask node {v} outside {} labels", labels.len())));
        }
        if predictions[v] == labels[v] {
            hits += 1;
        }
    }
    Ok(hits as f64 / mask.len() as f64)
}

/// φ or ψᵢ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PipelineId {
    Phi,
    Psi(Tap),
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineId::Phi => f.write_str("phi"),
            PipelineId::Psi(t) => write!(f, "psi{}", t.index()),
        }
    }
}

impl FromStr for PipelineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi" => Ok(PipelineId::Phi),
            _ => {
                let idx = s
                    .strip_prefix("psi")
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| Error::Argument(format!("unknown pipeline '{s}'")))?;
                Ok(PipelineId::Psi(Tap::from_index(idx)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMeta {
    pub arch: Arch,
    pub pipeline: PipelineId,
    pub x_kind: NoiseKind,
    pub a_kind: NoiseKind,
    pub split: Split,
    pub seed: u64,
}

impl GridMeta {
    /// `<arch>_<pipeline>_<Xkind>_<Akind>_<split>`.
    pub fn stem(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}",
            self.arch.name(),
            self.pipeline,
            self.x_kind,
            self.a_kind,
            self.split.name()
        )
    }
}

/// Accuracy indexed by `(n_X/10, n_A/10)`; `None` marks an absent or failed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyGrid {
    pub meta: GridMeta,
    pub values: [[Option<f64>; GRID_SIZE]; GRID_SIZE],
}

impl AccuracyGrid {
    pub fn empty(meta: GridMeta) -> Self {
        Self {
            meta,
            values: [[None; GRID_SIZE]; GRID_SIZE],
        }
    }

    pub fn get(&self, nx: u32, na: u32) -> Option<f64> {
        self.values[(nx / 10) as usize][(na / 10) as usize]
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.values {
            for v in row.iter().flatten() {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Integrity(format!("grid value {v} outside [0,1]")));
                }
            }
        }
        Ok(())
    }

    /// Largest spread of a row (fixed n_X) along n_A over present cells.
    pub fn max_spread_along_a(&self) -> f64 {
        self.values
            .iter()
            .map(|row| {
                let present = row.iter().flatten();
                let (lo, hi) = present.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                if lo.is_finite() {
                    hi - lo
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

/// One grid sweep configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub x_kind: NoiseKind,
    pub a_kind: NoiseKind,
    pub split: Split,
    pub taps: Vec<Tap>,
    pub pool_policy: PoolPolicy,
    pub seed: u64,
    /// Percent levels evaluated on each axis; other cells stay absent.
    pub levels: Vec<u32>,
}

impl GridSpec {
    pub fn new(x_kind: NoiseKind, a_kind: NoiseKind, split: Split, taps: Vec<Tap>, seed: u64) -> Result<Self> {
        let spec = Self {
            x_kind,
            a_kind,
            split,
            taps,
            pool_policy: PoolPolicy::Any,
            seed,
            levels: Percent::LEVELS.to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x_kind.is_feature() || self.a_kind.is_feature() {
            return Err(Error::Config(format!(
                "grid needs a feature kind and an adjacency kind, got {} and {}",
                self.x_kind, self.a_kind
            )));
        }
        if self.split == Split::Train {
            return Err(Error::Config("grids evaluate the val or test split".into()));
        }
        if let Some(l) = self.levels.iter().find(|&&l| l > 100 || l % 10 != 0) {
            return Err(Error::Config(format!("grid level {l} is not one of 0,10,...,100")));
        }
        Ok(())
    }

    /// All `(n_X, n_A)` cells, row-major.
    pub fn cells(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.levels.len() * self.levels.len());
        for &nx in &self.levels {
            for &na in &self.levels {
                out.push((nx, na));
            }
        }
        out
    }

    /// Pipelines evaluated per cell: φ then ψᵢ in tap order.
    pub fn pipelines(&self) -> Vec<PipelineId> {
        let mut taps = self.taps.clone();
        taps.sort();
        taps.dedup();
        core::iter::once(PipelineId::Phi)
            .chain(taps.into_iter().map(PipelineId::Psi))
            .collect()
    }
}

/// Feature-noise seed depends on `n_X` only and adjacency-noise seed on `n_A`
/// only, so a feature-only model sees the same inputs along a grid row.
pub fn cell_seeds(seed: u64, nx: u32, na: u32) -> (u64, u64) {
    (derive_seed(seed, &[1, nx as u64]), derive_seed(seed, &[2, na as u64]))
}

/// Distorts the val and test portions of `g`: features first, then adjacency.
pub fn noisy_instance(g: &Graph, spec: &GridSpec, nx: u32, na: u32) -> Result<Graph> {
    let (xs, as_) = cell_seeds(spec.seed, nx, na);
    let mut out = g.clone();
    for (kind, pct, axis_seed) in [(spec.x_kind, nx, xs), (spec.a_kind, na, as_)] {
        if pct == 0 {
            continue;
        }
        for split in [Split::Val, Split::Test] {
            let noise = NoiseSpec::new(
                kind,
                pct,
                spec.pool_policy.pool_for(split),
                split,
                derive_seed(axis_seed, &[split as u64]),
            )?;
            out = noise.apply(&out)?;
        }
    }
    Ok(out)
}

/// Accuracies for one cell; `None` where a pipeline failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub nx: u32,
    pub na: u32,
    /// Fingerprint of the noisy graph every pipeline in this cell saw.
    pub instance_hash: u64,
    pub accuracies: Vec<(PipelineId, Option<f64>)>,
    pub errors: Vec<String>,
}

/// Builds the noisy instance once and evaluates φ and every ψᵢ on it.
pub fn evaluate_cell(bundle: &PsiBundle, g: &Graph, spec: &GridSpec, nx: u32, na: u32) -> CellResult {
    let pipelines = spec.pipelines();
    let mut result = CellResult {
        nx,
        na,
        instance_hash: 0,
        accuracies: pipelines.iter().map(|&p| (p, None)).collect(),
        errors: Vec::new(),
    };
    let noisy = match noisy_instance(g, spec, nx, na) {
        Ok(n) => n,
        Err(e) => {
            result.errors.push(format!("noise: {e}"));
            return result;
        }
    };
    result.instance_hash = noisy.fingerprint();
    let mask = noisy.split().get(spec.split);
    let prop = Propagation::for_graph(bundle.model().arch, &noisy);
    let phi = match forward_phi_with(bundle.model(), &prop, &noisy) {
        Ok(p) => p,
        Err(e) => {
            result.errors.push(format!("phi: {e}"));
            return result;
        }
    };
    for (pid, slot) in result.accuracies.iter_mut() {
        let acc = match pid {
            PipelineId::Phi => accuracy(&phi.predictions, noisy.labels(), mask),
            PipelineId::Psi(tap) => run_psi_from(bundle, &prop, &phi.trace, *tap)
                .and_then(|out| accuracy(&out.predictions, noisy.labels(), mask)),
        };
        match acc {
            Ok(a) => *slot = Some(a),
            Err(e) => result.errors.push(format!("{pid}: {e}")),
        }
    }
    result
}

/// Scatters cell results into one grid per pipeline.
pub fn assemble_grids(arch: Arch, spec: &GridSpec, cells: &[CellResult]) -> Vec<AccuracyGrid> {
    let mut grids: Vec<AccuracyGrid> = spec
        .pipelines()
        .into_iter()
        .map(|pipeline| {
            AccuracyGrid::empty(GridMeta {
                arch,
                pipeline,
                x_kind: spec.x_kind,
                a_kind: spec.a_kind,
                split: spec.split,
                seed: spec.seed,
            })
        })
        .collect();
    for cell in cells {
        let (i, j) = ((cell.nx / 10) as usize, (cell.na / 10) as usize);
        for (pid, acc) in &cell.accuracies {
            if let Some(grid) = grids.iter_mut().find(|g| g.meta.pipeline == *pid) {
                grid.values[i][j] = *acc;
            }
        }
    }
    grids
}

/// Sequential sweep over every cell of `spec`.
pub fn run_grid(bundle: &PsiBundle, g: &Graph, spec: &GridSpec) -> Result<(Vec<AccuracyGrid>, Vec<CellResult>)> {
    spec.validate()?;
    for &tap in &spec.taps {
        if bundle.denoiser(tap).is_none() {
            return Err(Error::Config(format!("bundle has no denoiser for {tap}")));
        }
    }
    if g.split().get(spec.split).is_empty() {
        return Err(Error::Config(format!("{} split is empty", spec.split.name())));
    }
    let cells: Vec<CellResult> = spec
        .cells()
        .into_iter()
        .map(|(nx, na)| evaluate_cell(bundle, g, spec, nx, na))
        .collect();
    Ok((assemble_grids(bundle.model().arch, spec, &cells), cells))
}

/// Cell-wise mean and population standard deviation over same-shaped grids;
/// a cell is present only when present in every input.
pub fn mean_std_grids(grids: &[AccuracyGrid]) -> Result<(AccuracyGrid, AccuracyGrid)> {
    let first = grids.first().ok_or_else(|| Error::Argument("no grids to aggregate".into()))?;
    let mut mean = AccuracyGrid::empty(first.meta.clone());
    let mut std = AccuracyGrid::empty(first.meta.clone());
    for i in 0..GRID_SIZE {
        for j in 0..GRID_SIZE {
            let vals: Option<Vec<f64>> = grids.iter().map(|g| g.values[i][j]).collect();
            if let Some(vals) = vals {
                let n = vals.len() as f64;
                let m = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                mean.values[i][j] = Some(m);
                std.values[i][j] = Some(libm::sqrt(var));
            }
        }
    }
    Ok((mean, std))
}

/// Difference `a − b` per cell.
pub fn grid_gap(a: &AccuracyGrid, b: &AccuracyGrid) -> [[Option<f64>; GRID_SIZE]; GRID_SIZE] {
    let mut out = [[None; GRID_SIZE]; GRID_SIZE];
    for i in 0..GRID_SIZE {
        for j in 0..GRID_SIZE {
            if let (Some(x), Some(y)) = (a.values[i][j], b.values[i][j]) {
                out[i][j] = Some(x - y);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::graph::{generate_sbm_graph, SbmConfig};
    use crate::nn::{train_dnn, TrainConfig};

    #[test]
    fn accuracy_examples() {
        let labels = [0, 1, 2, 0, 1, 2, 0, 1, 2, 0];
        let all = NodeSet::range(0, 10);
        assert_eq!(accuracy(&labels, &labels, &all).unwrap(), 1.0);
        let shifted: Vec<usize> = labels.iter().map(|l| (l + 1) % 3).collect();
        assert_eq!(accuracy(&shifted, &labels, &all).unwrap(), 0.0);
        let mut p = labels;
        p[2] = 0;
        assert_eq!(accuracy(&p, &labels, &NodeSet::range(0, 4)).unwrap(), 0.75);
        assert!(matches!(accuracy(&p, &labels, &NodeSet::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn pipeline_ids_round_trip() {
        for id in [PipelineId::Phi, PipelineId::Psi(Tap::Z0), PipelineId::Psi(Tap::Z3)] {
            assert_eq!(id.to_string().parse::<PipelineId>().unwrap(), id);
        }
        assert!("psi4".parse::<PipelineId>().is_err());
    }

    fn setup(arch: Arch) -> (PsiBundle, Graph) {
        let g = generate_sbm_graph(&SbmConfig {
            num_nodes: 60,
            num_classes: 3,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 6,
            feature_shift: 1.0,
            seed: 2,
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            hidden_dim: 8,
            ..TrainConfig::default()
        };
        let m = train_dnn(&g, arch, &cfg, None).unwrap();
        (PsiBundle::identity(m).unwrap(), g)
    }

    fn small_spec(x: NoiseKind, a: NoiseKind) -> GridSpec {
        let mut s = GridSpec::new(x, a, Split::Test, vec![Tap::Z0, Tap::Z2], 5).unwrap();
        s.levels = vec![0, 50, 100];
        s
    }

    #[test]
    fn origin_cell_is_clean_accuracy() {
        let (bundle, g) = setup(Arch::Gcn);
        let spec = small_spec(NoiseKind::Xz, NoiseKind::Ac);
        let (grids, cells) = run_grid(&bundle, &g, &spec).unwrap();
        let prop = Propagation::for_graph(Arch::Gcn, &g);
        let clean = forward_phi_with(bundle.model(), &prop, &g).unwrap();
        let acc = accuracy(&clean.predictions, g.labels(), &g.split().test).unwrap();
        for grid in &grids {
            assert_eq!(grid.get(0, 0), Some(acc));
            assert_eq!(grid.get(10, 10), None);
            grid.validate().unwrap();
        }
        assert_eq!(cells[0].instance_hash, g.fingerprint());
        assert_eq!(grids.len(), 3);
    }

    #[test]
    fn mlp_rows_are_constant_along_adjacency_noise() {
        let (bundle, g) = setup(Arch::Mlp);
        for a in [NoiseKind::Ac, NoiseKind::Az] {
            let (grids, _) = run_grid(&bundle, &g, &small_spec(NoiseKind::Xc, a)).unwrap();
            for grid in grids {
                assert_eq!(grid.max_spread_along_a(), 0.0);
            }
        }
    }

    #[test]
    fn reruns_are_identical_and_train_rows_untouched() {
        let (bundle, g) = setup(Arch::Sage);
        let spec = small_spec(NoiseKind::Xc, NoiseKind::Az);
        assert_eq!(run_grid(&bundle, &g, &spec).unwrap(), run_grid(&bundle, &g, &spec).unwrap());
        let noisy = noisy_instance(&g, &spec, 100, 0).unwrap();
        for v in g.split().train.iter() {
            assert_eq!(noisy.features().row(v), g.features().row(v));
        }
        for v in g.split().test.iter() {
            assert!(noisy.features().row(v).iter().zip(g.features().row(v)).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn missing_denoiser_is_a_config_error() {
        let (bundle, g) = setup(Arch::Mlp);
        let model = bundle.model().clone();
        let b = PsiBundle::new(model, [None, None, None, None], 1).unwrap();
        assert!(matches!(
            run_grid(&b, &g, &small_spec(NoiseKind::Xc, NoiseKind::Az)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(NoiseKind::Ac, NoiseKind::Az, Split::Test, vec![], 0).is_err());
        assert!(GridSpec::new(NoiseKind::Xc, NoiseKind::Az, Split::Train, vec![], 0).is_err());
        let mut s = GridSpec::new(NoiseKind::Xc, NoiseKind::Az, Split::Val, vec![Tap::Z1, Tap::Z1], 0).unwrap();
        assert_eq!(s.pipelines(), vec![PipelineId::Phi, PipelineId::Psi(Tap::Z1)]);
        s.levels = vec![15];
        assert!(s.validate().is_err());
    }

    #[test]
    fn mean_std_of_identical_grids() {
        let meta = GridMeta {
            arch: Arch::Gcn,
            pipeline: PipelineId::Phi,
            x_kind: NoiseKind::Xc,
            a_kind: NoiseKind::Ac,
            split: Split::Test,
            seed: 0,
        };
        let mut g = AccuracyGrid::empty(meta.clone());
        g.values[1][2] = Some(0.5);
        let mut h = g.clone();
        h.values[1][2] = Some(0.7);
        h.values[3][3] = Some(0.1);
        let (m, s) = mean_std_grids(&[g, h]).unwrap();
        assert!((m.values[1][2].unwrap() - 0.6).abs() < 1e-12);
        assert!((s.values[1][2].unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(m.values[3][3], None);
        assert_eq!(meta.stem(), "gcn_phi_Xc_Ac_test");
    }
}
