//! TOML run configuration. Every table rejects unknown keys; command-line
//! flags override file values after loading.

use std::path::{Path, PathBuf};

use gsr_core::distortion::{NoiseKind, PoolPolicy};
use gsr_core::graph::SbmConfig;
use gsr_core::n2v::WalkConfig;
use gsr_core::nn::{OptimizerKind, TrainConfig};
use gsr_core::random::derive_seed;
use gsr_core::rbm::RbmTrainConfig;
use gsr_core::tsne::TsneConfig;
use gsr_core::{Arch, Split, Tap};
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetId;
use crate::error::{Error, Result};

/// Streams derived from the root seed. Fixed indices so adding a consumer
/// never shifts another.
pub mod streams {
    pub const TRAIN: u64 = 1;
    pub const N2V: u64 = 2;
    pub const RBM: u64 = 3;
    pub const GRID: u64 = 4;
    pub const PROJECT: u64 = 5;
    pub const PSI: u64 = 6;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads for grids; 0 means one per logical core.
    pub jobs: usize,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub n2v: N2vSection,
    pub rbm: RbmSection,
    pub grid: GridSection,
    pub project: ProjectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("gsr-out"),
            jobs: 0,
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            n2v: N2vSection::default(),
            rbm: RbmSection::default(),
            grid: GridSection::default(),
            project: ProjectSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetId,
    /// Overrides the `$GSR_DATA_DIR` location of a real dataset.
    pub path: Option<PathBuf>,
    pub sbm: SbmSection,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: DatasetId::Sbm,
            path: None,
            sbm: SbmSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmSection {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
}

impl Default for SbmSection {
    fn default() -> Self {
        let d = SbmConfig::default();
        SbmSection {
            num_nodes: d.num_nodes,
            num_classes: d.num_classes,
            p_in: d.p_in,
            p_out: d.p_out,
            feature_dim: d.feature_dim,
            feature_shift: d.feature_shift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub arch: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub optimizer: OptimizerName,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            arch: "gcn".into(),
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            dropout: d.dropout_p,
            hidden_dim: d.hidden_dim,
            optimizer: OptimizerName::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct N2vSection {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub p: f64,
    pub q: f64,
    pub window: usize,
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for N2vSection {
    fn default() -> Self {
        let d = WalkConfig::default();
        N2vSection {
            walks_per_node: d.walks_per_node,
            walk_length: d.walk_length,
            p: d.p,
            q: d.q,
            window: d.window,
            dim: d.embedding_dim,
            negatives: d.negatives,
            epochs: d.epochs,
            lr: d.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbmSection {
    pub taps: Vec<usize>,
    pub hidden_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub cd_steps: usize,
    pub lr: f64,
    pub gibbs_rounds: usize,
    pub sample_hidden: bool,
}

impl Default for RbmSection {
    fn default() -> Self {
        let d = RbmTrainConfig::default();
        RbmSection {
            taps: vec![0, 1, 2, 3],
            hidden_units: d.hidden_units,
            epochs: d.epochs,
            batch_size: d.batch_size,
            cd_steps: d.cd_steps,
            lr: d.lr,
            gibbs_rounds: 1,
            sample_hidden: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolName {
    Any,
    SplitAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// `c` or `z`.
    pub x_noise: String,
    pub a_noise: String,
    /// `val` or `test`.
    pub split: String,
    pub taps: Vec<usize>,
    pub pool: PoolName,
    pub levels: Vec<u32>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            x_noise: "z".into(),
            a_noise: "z".into(),
            split: "test".into(),
            taps: vec![0, 1, 2, 3],
            pool: PoolName::Any,
            levels: gsr_core::distortion::Percent::LEVELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectSection {
    pub perplexity: f64,
    pub iterations: usize,
    pub n_x: u32,
    pub n_a: u32,
    /// Rows are subsampled (seeded) above this count.
    pub max_points: usize,
}

impl Default for ProjectSection {
    fn default() -> Self {
        let d = TsneConfig::default();
        ProjectSection {
            perplexity: d.perplexity,
            iterations: d.iterations,
            n_x: 50,
            n_a: 0,
            max_points: 1000,
        }
    }
}

pub fn parse_arch(s: &str) -> Result<Arch> {
    s.parse::<Arch>()
        .map_err(|_| Error::Usage(format!("unknown architecture '{s}' (expected mlp, n2v, gcn or sage)")))
}

pub fn parse_taps(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("invalid tap '{t}' in --taps")))
        })
        .collect()
}

pub fn parse_x_noise(s: &str) -> Result<NoiseKind> {
    match s.to_ascii_lowercase().as_str() {
        "c" | "xc" => Ok(NoiseKind::Xc),
        "z" | "xz" => Ok(NoiseKind::Xz),
        _ => Err(Error::Usage(format!("unknown feature noise '{s}' (expected c or z)"))),
    }
}

pub fn parse_a_noise(s: &str) -> Result<NoiseKind> {
    match s.to_ascii_lowercase().as_str() {
        "c" | "ac" => Ok(NoiseKind::Ac),
        "z" | "az" => Ok(NoiseKind::Az),
        _ => Err(Error::Usage(format!("unknown adjacency noise '{s}' (expected c or z)"))),
    }
}

pub fn parse_split(s: &str) -> Result<Split> {
    match s {
        "val" | "valid" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(Error::Usage(format!("grid split must be val or test, got '{s}'"))),
    }
}

fn to_taps(v: &[usize]) -> Result<Vec<Tap>> {
    v.iter()
        .map(|&i| Tap::from_index(i).map_err(|e| Error::Config(e.to_string())))
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        parse_arch(&self.train.arch).map_err(|e| Error::Config(e.to_string()))?;
        self.train_config().validate()?;
        self.walk_config().validate()?;
        self.rbm_config(Tap::from_index(0)?).validate()?;
        if self.rbm.gibbs_rounds == 0 {
            return Err(Error::Config("rbm.gibbs_rounds must be >= 1".into()));
        }
        to_taps(&self.rbm.taps)?;
        to_taps(&self.grid.taps)?;
        parse_x_noise(&self.grid.x_noise).map_err(|e| Error::Config(e.to_string()))?;
        parse_a_noise(&self.grid.a_noise).map_err(|e| Error::Config(e.to_string()))?;
        parse_split(&self.grid.split).map_err(|e| Error::Config(e.to_string()))?;
        for &l in self.grid.levels.iter().chain([&self.project.n_x, &self.project.n_a]) {
            gsr_core::distortion::Percent::new(l).map_err(|e| Error::Config(e.to_string()))?;
            if l % 10 != 0 {
                return Err(Error::Config(format!("noise level {l} is not a multiple of 10")));
            }
        }
        let s = &self.dataset.sbm;
        if !(0.0..=1.0).contains(&s.p_out) || !(s.p_out..=1.0).contains(&s.p_in) {
            return Err(Error::Config(format!("sbm needs 0 <= p_out <= p_in <= 1, got {} / {}", s.p_out, s.p_in)));
        }
        if self.project.perplexity < 2.0 || self.project.iterations == 0 {
            return Err(Error::Config("project needs perplexity >= 2 and iterations >= 1".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<Arch> {
        parse_arch(&self.train.arch)
    }

    pub fn sbm_config(&self) -> SbmConfig {
        let s = &self.dataset.sbm;
        SbmConfig {
            num_nodes: s.num_nodes,
            num_classes: s.num_classes,
            p_in: s.p_in,
            p_out: s.p_out,
            feature_dim: s.feature_dim,
            feature_shift: s.feature_shift,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            dropout_p: t.dropout,
            hidden_dim: t.hidden_dim,
            seed: derive_seed(self.seed, &[streams::TRAIN]),
            optimizer: match t.optimizer {
                OptimizerName::Adam => OptimizerKind::Adam,
                OptimizerName::Sgd => OptimizerKind::Sgd,
            },
        }
    }

    pub fn walk_config(&self) -> WalkConfig {
        let n = &self.n2v;
        WalkConfig {
            walks_per_node: n.walks_per_node,
            walk_length: n.walk_length,
            p: n.p,
            q: n.q,
            window: n.window,
            embedding_dim: n.dim,
            negatives: n.negatives,
            epochs: n.epochs,
            lr: n.lr,
            seed: derive_seed(self.seed, &[streams::N2V]),
        }
    }

    pub fn rbm_config(&self, tap: Tap) -> RbmTrainConfig {
        let r = &self.rbm;
        RbmTrainConfig {
            hidden_units: r.hidden_units,
            epochs: r.epochs,
            batch_size: r.batch_size,
            cd_steps: r.cd_steps,
            lr: r.lr,
            seed: derive_seed(self.seed, &[streams::RBM, tap.index() as u64]),
        }
    }

    pub fn rbm_taps(&self) -> Result<Vec<Tap>> {
        to_taps(&self.rbm.taps)
    }

    pub fn grid_taps(&self) -> Result<Vec<Tap>> {
        to_taps(&self.grid.taps)
    }

    pub fn pool_policy(&self) -> PoolPolicy {
        match self.grid.pool {
            PoolName::Any => PoolPolicy::Any,
            PoolName::SplitAware => PoolPolicy::SplitAware,
        }
    }

    pub fn grid_seed(&self) -> u64 {
        derive_seed(self.seed, &[streams::GRID])
    }

    pub fn psi_seed(&self) -> u64 {
        derive_seed(self.seed, &[streams::PSI])
    }

    pub fn tsne_config(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.project.perplexity,
            iterations: self.project.iterations,
            seed: derive_seed(self.seed, &[streams::PROJECT]),
            ..TsneConfig::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[train]\narch = \"sage\"\n[rbm]\ntaps = [0, 2]\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.arch().unwrap(), Arch::Sage);
        assert_eq!(cfg.rbm.taps, vec![0, 2]);
        assert_eq!(cfg.train.epochs, 200);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["sed = 1", "[train]\nepochz = 3", "[dataset.sbm]\nnodes = 3", "[bogus]"] {
            assert!(matches!(RunConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in [
            "[train]\narch = \"cnn\"",
            "[grid]\nlevels = [15]",
            "[grid]\nx_noise = \"q\"",
            "[rbm]\ntaps = [4]",
            "[dataset.sbm]\np_in = 0.1\np_out = 0.2",
            "[train]\ndropout = 1.0",
        ] {
            assert!(RunConfig::from_toml(bad).is_err(), "{bad}");
        }
    }
}
