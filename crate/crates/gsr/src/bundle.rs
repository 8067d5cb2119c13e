//! Run directory layout and the JSON manifest tying checkpoints together.
//!
//! Paths inside the manifest are relative to the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gsr_core::pipeline::{Denoiser, PsiBundle};
use gsr_core::{DnnModel, Tap};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPH_FILE: &str = "graph.gsr";
pub const MODEL_FILE: &str = "model.gsrm";
pub const EMBEDDINGS_FILE: &str = "embeddings.gsrx";

pub fn rbm_file(tap: Tap) -> String {
    format!("rbm_{tap}.gsrr")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub dataset: String,
    /// Hex fingerprint of the clean graph the artifacts were built on.
    pub graph_fingerprint: String,
    pub arch: Option<String>,
    pub model: Option<String>,
    pub embeddings: Option<String>,
    /// Tap index → RBM checkpoint.
    pub rbms: BTreeMap<usize, String>,
    pub gibbs_rounds: usize,
    pub sample_hidden: bool,
    pub psi_seed: u64,
}

impl RunManifest {
    pub fn new(seed: u64, dataset: &str, graph_fingerprint: u64) -> Self {
        RunManifest {
            version: VERSION.to_string(),
            seed,
            dataset: dataset.to_string(),
            graph_fingerprint: format!("{graph_fingerprint:016x}"),
            arch: None,
            model: None,
            embeddings: None,
            rbms: BTreeMap::new(),
            gibbs_rounds: 1,
            sample_hidden: false,
            psi_seed: 0,
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        formats::atomic_write(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Every referenced file must exist.
    pub fn check_files(&self, dir: &Path) -> Result<()> {
        let files = self.model.iter().chain(&self.embeddings).chain(self.rbms.values());
        for f in files {
            let p = dir.join(f);
            if !p.exists() {
                return Err(Error::MissingArtifact(format!("{} (listed in {})", p.display(), MANIFEST_FILE)));
            }
        }
        Ok(())
    }

    pub fn fingerprint_matches(&self, fp: u64) -> bool {
        self.graph_fingerprint == format!("{fp:016x}")
    }
}

/// Loads the model named by the manifest.
pub fn load_model(dir: &Path, manifest: &RunManifest) -> Result<DnnModel> {
    let rel = manifest.model.as_deref().ok_or_else(|| {
        Error::MissingArtifact(format!("trained model checkpoint in {} (run `gsr train` first)", dir.display()))
    })?;
    let path = dir.join(rel);
    if !path.exists() {
        return Err(Error::MissingArtifact(format!("trained model checkpoint {}", path.display())));
    }
    formats::load_model(&path)
}

/// Assembles φ plus RBM-zᵢ denoisers for `taps`; each must have a checkpoint.
pub fn load_bundle(dir: &Path, manifest: &RunManifest, taps: &[Tap]) -> Result<PsiBundle> {
    let model = load_model(dir, manifest)?;
    let mut denoisers: [Option<Denoiser>; 4] = Default::default();
    for &tap in taps {
        let rel = manifest.rbms.get(&tap.index()).ok_or_else(|| {
            Error::MissingArtifact(format!("RBM checkpoint for {tap} in {} (run `gsr rbm` first)", dir.display()))
        })?;
        let path = dir.join(rel);
        if !path.exists() {
            return Err(Error::MissingArtifact(format!("RBM checkpoint {}", path.display())));
        }
        let (rbm, scaler, _) = formats::load_rbm(&path)?;
        denoisers[tap.index()] = Some(Denoiser::Rbm { rbm, scaler });
    }
    Ok(PsiBundle::new(model, denoisers, manifest.gibbs_rounds)?
        .with_sampling(manifest.sample_hidden, manifest.psi_seed))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
