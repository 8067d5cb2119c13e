//! `gsr` command line: argument parsing, config merging and the subcommands.
//!
//! Exit status: 0 success, 1 usage error or missing artifact, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gsr_core::evaluation::{accuracy, noisy_instance, GridSpec};
use gsr_core::n2v::node2vec;
use gsr_core::nn::train_dnn_with_history;
use gsr_core::pipeline::{extract_representations, forward_phi, PsiBundle};
use gsr_core::random::derive_seed;
use gsr_core::rbm::train_rbm_with_history;
use gsr_core::tsne::tsne_embed;
use gsr_core::{Arch, Graph, NodeSet, Tap};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bundle::{self, RunManifest, EMBEDDINGS_FILE, GRAPH_FILE, MODEL_FILE};
use crate::config::{self, PoolName, RunConfig};
use crate::datasets::{self, DatasetId, GraphFormat, GraphStats};
use crate::error::{Error, Result};
use crate::formats;
use crate::grid::{pool, run_grid_parallel};
use crate::report::{self, NoiseRecord, ResultsBundle, Snapshot, SnapshotMeta, Variant};
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "gsr", version, about = "Graph signal recovery with RBM denoisers")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Run directory for artifacts and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// wikics, ogbn-arxiv or sbm.
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// mlp, n2v, gcn or sage.
    #[arg(long, global = true)]
    pub arch: Option<String>,
    /// Comma-separated tap indices, e.g. 0,1,2,3.
    #[arg(long, global = true)]
    pub taps: Option<String>,
    /// Feature noise: c (corrupt) or z (blank).
    #[arg(long = "x-noise", global = true)]
    pub x_noise: Option<String>,
    /// Adjacency noise: c (rewire) or z (delete).
    #[arg(long = "a-noise", global = true)]
    pub a_noise: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load or generate a graph and print its statistics.
    Data {
        /// Generate a synthetic graph instead of loading one (only `sbm`).
        #[arg(long)]
        synthetic: Option<String>,
        /// Explicit dataset file or directory.
        #[arg(long)]
        path: Option<PathBuf>,
        /// wikics-json, ogb-dir or native-binary (with --path).
        #[arg(long)]
        format: Option<String>,
        /// Also write the graph as a native checkpoint into the run directory.
        #[arg(long)]
        save: bool,
    },
    /// Train the classifier φ.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Compute node2vec embeddings.
    Embed,
    /// Train RBM-zᵢ for the chosen taps on clean training representations.
    Rbm {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        gibbs_rounds: Option<usize>,
    },
    /// Evaluate φ and ψᵢ over the noise grid and export CSV/JSON/HTML.
    Grid {
        /// Model checkpoint; defaults to the one recorded in the run directory.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated percent levels (multiples of 10).
        #[arg(long)]
        levels: Option<String>,
        /// val or test.
        #[arg(long)]
        split: Option<String>,
    },
    /// t-SNE snapshots of desired, noisy and denoised representations.
    Project {
        #[arg(long)]
        n_x: Option<u32>,
        #[arg(long)]
        n_a: Option<u32>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        max_points: Option<usize>,
    },
    /// Rebuild the HTML report from saved results.
    Report,
    /// Run the built-in property suites.
    Verify,
}

/// Parses `args` and runs; returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            match summary.get("passed") {
                Some(Value::Bool(false)) => 2,
                _ => 0,
            }
        }
        Err(e) => {
            eprintln!("gsr: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}

/// Config file plus flag overrides, validated.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => return Err(Error::MissingArtifact(format!("config file {}", p.display()))),
        Some(p) => RunConfig::load(p).map_err(config_as_usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &cli.dataset {
        cfg.dataset.source = d.parse()?;
    }
    if let Some(a) = &cli.arch {
        cfg.train.arch = config::parse_arch(a)?.name().into();
    }
    if let Some(t) = &cli.taps {
        let taps = config::parse_taps(t)?;
        for &i in &taps {
            Tap::from_index(i).map_err(|e| Error::Usage(e.to_string()))?;
        }
        cfg.rbm.taps = taps.clone();
        cfg.grid.taps = taps;
    }
    if let Some(x) = &cli.x_noise {
        cfg.grid.x_noise = config::parse_x_noise(x)?.name().into();
    }
    if let Some(a) = &cli.a_noise {
        cfg.grid.a_noise = config::parse_a_noise(a)?.name().into();
    }
    match &cli.command {
        Command::Train { epochs: Some(e) } => cfg.train.epochs = *e,
        Command::Rbm {
            epochs,
            hidden,
            gibbs_rounds,
        } => {
            if let Some(e) = epochs {
                cfg.rbm.epochs = *e;
            }
            if let Some(h) = hidden {
                cfg.rbm.hidden_units = *h;
            }
            if let Some(g) = gibbs_rounds {
                cfg.rbm.gibbs_rounds = *g;
            }
        }
        Command::Grid { levels, split, .. } => {
            if let Some(l) = levels {
                cfg.grid.levels = l
                    .split(',')
                    .map(|t| t.trim().parse::<u32>().map_err(|_| Error::Usage(format!("invalid level '{t}'"))))
                    .collect::<Result<_>>()?;
            }
            if let Some(s) = split {
                cfg.grid.split = config::parse_split(s)?.name().into();
            }
        }
        Command::Project {
            n_x,
            n_a,
            iterations,
            max_points,
        } => {
            if let Some(v) = n_x {
                cfg.project.n_x = *v;
            }
            if let Some(v) = n_a {
                cfg.project.n_a = *v;
            }
            if let Some(v) = iterations {
                cfg.project.iterations = *v;
            }
            if let Some(v) = max_points {
                cfg.project.max_points = *v;
            }
        }
        _ => {}
    }
    cfg.validate().map_err(config_as_usage)?;
    Ok(cfg)
}

/// A bad config file is the user's input, so it exits like a bad flag.
fn config_as_usage(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Usage(m),
        other => other,
    }
}

pub fn run(cli: &Cli) -> Result<Value> {
    if let Command::Verify = cli.command {
        return Ok(cmd_verify());
    }
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Data {
            synthetic,
            path,
            format,
            save,
        } => cmd_data(&cfg, synthetic.as_deref(), path.as_deref(), format.as_deref(), *save),
        Command::Train { .. } => cmd_train(&cfg),
        Command::Embed => cmd_embed(&cfg),
        Command::Rbm { .. } => cmd_rbm(&cfg),
        Command::Grid { model, .. } => cmd_grid(&cfg, model.as_deref()),
        Command::Project { .. } => cmd_project(&cfg),
        Command::Report => cmd_report(&cfg),
        Command::Verify => unreachable!("handled above"),
    }
}

/// Graph named by the config: explicit path, data directory or SBM.
pub fn load_graph(cfg: &RunConfig) -> Result<Graph> {
    let id = cfg.dataset.source;
    match (&cfg.dataset.path, id) {
        (_, DatasetId::Sbm) => Ok(gsr_core::graph::generate_sbm_graph(&cfg.sbm_config())?),
        (Some(p), _) => datasets::load_graph(p, id.format()),
        (None, _) => datasets::load_dataset(id, &cfg.sbm_config()),
    }
}

/// Existing manifest if it belongs to this graph and seed, else a fresh one.
fn manifest_for(cfg: &RunConfig, g: &Graph) -> Result<RunManifest> {
    let fp = g.fingerprint();
    match RunManifest::load(&cfg.out)? {
        Some(m) if m.fingerprint_matches(fp) && m.seed == cfg.seed => Ok(m),
        _ => Ok(RunManifest::new(cfg.seed, cfg.dataset.source.name(), fp)),
    }
}

fn cmd_data(cfg: &RunConfig, synthetic: Option<&str>, path: Option<&Path>, format: Option<&str>, save: bool) -> Result<Value> {
    let g = match (synthetic, path) {
        (Some(_), Some(_)) => return Err(Error::Usage("--synthetic and --path are mutually exclusive".into())),
        (Some("sbm"), None) => gsr_core::graph::generate_sbm_graph(&cfg.sbm_config())?,
        (Some(other), None) => return Err(Error::Usage(format!("unknown synthetic generator '{other}' (expected sbm)"))),
        (None, Some(p)) => {
            let fmt: GraphFormat = match format {
                Some(f) => f.parse()?,
                None => return Err(Error::Usage("--path needs --format".into())),
            };
            datasets::load_graph(p, fmt)?
        }
        (None, None) => load_graph(cfg)?,
    };
    let stats = GraphStats::of(&g);
    let mut out = json!({"command": "data", "seed": cfg.seed, "stats": stats});
    if save {
        let p = cfg.out.join(GRAPH_FILE);
        formats::save_graph(&p, &g)?;
        out["graph"] = json!(p);
    }
    Ok(out)
}

fn embeddings_for(cfg: &RunConfig, g: &Graph, manifest: &mut RunManifest) -> Result<(gsr_core::DenseMatrix, usize)> {
    let path = cfg.out.join(EMBEDDINGS_FILE);
    if manifest.embeddings.is_some() && path.exists() {
        let e = formats::load_matrix(&path)?;
        if e.rows() == g.num_nodes() {
            return Ok((e, 0));
        }
    }
    let (e, skipped) = node2vec(g, &cfg.walk_config())?;
    formats::save_matrix(&path, &e)?;
    manifest.embeddings = Some(EMBEDDINGS_FILE.into());
    Ok((e, skipped.len()))
}

fn cmd_embed(cfg: &RunConfig) -> Result<Value> {
    let g = load_graph(cfg)?;
    let mut manifest = manifest_for(cfg, &g)?;
    manifest.embeddings = None;
    let (e, skipped) = embeddings_for(cfg, &g, &mut manifest)?;
    manifest.save(&cfg.out)?;
    Ok(json!({
        "command": "embed",
        "seed": cfg.seed,
        "nodes": e.rows(),
        "dim": e.cols(),
        "isolated_nodes": skipped,
        "embeddings": cfg.out.join(EMBEDDINGS_FILE),
    }))
}

fn split_accuracy(model: &gsr_core::DnnModel, g: &Graph) -> Result<(Option<f64>, Option<f64>)> {
    let preds = forward_phi(model, g)?.predictions;
    let acc = |m: &NodeSet| -> Result<Option<f64>> {
        if m.is_empty() {
            Ok(None)
        } else {
            Ok(Some(accuracy(&preds, g.labels(), m)?))
        }
    };
    Ok((acc(&g.split().val)?, acc(&g.split().test)?))
}

fn cmd_train(cfg: &RunConfig) -> Result<Value> {
    let g = load_graph(cfg)?;
    let arch = cfg.arch()?;
    let mut manifest = manifest_for(cfg, &g)?;
    let emb = if arch == Arch::N2v {
        Some(embeddings_for(cfg, &g, &mut manifest)?.0)
    } else {
        None
    };
    let outcome = train_dnn_with_history(&g, arch, &cfg.train_config(), emb.as_ref())?;
    let (val, test) = split_accuracy(&outcome.model, &g)?;
    formats::save_model(&cfg.out.join(MODEL_FILE), &outcome.model)?;
    manifest.arch = Some(arch.name().into());
    manifest.model = Some(MODEL_FILE.into());
    // RBMs were fit to the previous model's representations.
    manifest.rbms.clear();
    manifest.save(&cfg.out)?;
    Ok(json!({
        "command": "train",
        "seed": cfg.seed,
        "arch": arch.name(),
        "best_epoch": outcome.best_epoch,
        "val_accuracy": val,
        "test_accuracy": test,
        "model": cfg.out.join(MODEL_FILE),
    }))
}

fn cmd_rbm(cfg: &RunConfig) -> Result<Value> {
    let g = load_graph(cfg)?;
    let mut manifest = manifest_for(cfg, &g)?;
    let model = bundle::load_model(&cfg.out, &manifest)?;
    let taps = cfg.rbm_taps()?;
    if taps.is_empty() {
        return Err(Error::Usage("no taps selected".into()));
    }
    let train = &g.split().train;
    let mut trained = Vec::new();
    for tap in taps {
        let z = extract_representations(&model, &g, tap, train)?;
        let rcfg = cfg.rbm_config(tap);
        let (rbm, scaler, history) = train_rbm_with_history(&z, &rcfg)?;
        let file = bundle::rbm_file(tap);
        formats::save_rbm(&cfg.out.join(&file), &rbm, &scaler, &rcfg)?;
        manifest.rbms.insert(tap.index(), file);
        trained.push(json!({
            "tap": tap.index(),
            "visible": rbm.visible_dim(),
            "hidden": rbm.hidden_dim(),
            "final_reconstruction_error": history.last(),
        }));
    }
    manifest.gibbs_rounds = cfg.rbm.gibbs_rounds;
    manifest.sample_hidden = cfg.rbm.sample_hidden;
    manifest.psi_seed = cfg.psi_seed();
    manifest.save(&cfg.out)?;
    Ok(json!({"command": "rbm", "seed": cfg.seed, "rbms": trained}))
}

fn grid_spec(cfg: &RunConfig, taps: Vec<Tap>) -> Result<GridSpec> {
    let mut spec = GridSpec::new(
        config::parse_x_noise(&cfg.grid.x_noise)?,
        config::parse_a_noise(&cfg.grid.a_noise)?,
        config::parse_split(&cfg.grid.split)?,
        taps,
        cfg.grid_seed(),
    )?;
    spec.pool_policy = cfg.pool_policy();
    spec.levels = cfg.grid.levels.clone();
    spec.validate()?;
    Ok(spec)
}

/// Manifest for grid/project runs; `model` overrides the recorded checkpoint.
fn trained_manifest(cfg: &RunConfig, g: &Graph, model: Option<&Path>) -> Result<RunManifest> {
    let mut manifest = match RunManifest::load(&cfg.out)? {
        Some(m) => m,
        None if model.is_some() => RunManifest::new(cfg.seed, cfg.dataset.source.name(), g.fingerprint()),
        None => {
            return Err(Error::MissingArtifact(format!(
                "trained model: no {} in {} (run `gsr train` or pass --model)",
                bundle::MANIFEST_FILE,
                cfg.out.display()
            )))
        }
    };
    if let Some(p) = model {
        if !p.exists() {
            return Err(Error::MissingArtifact(format!("trained model checkpoint {}", p.display())));
        }
        manifest.model = Some(std::path::absolute(p).map_err(|e| Error::io(p, e))?.to_string_lossy().into_owned());
    }
    if !manifest.fingerprint_matches(g.fingerprint()) {
        return Err(Error::Config(format!(
            "artifacts in {} were built on a different graph (fingerprint {})",
            cfg.out.display(),
            manifest.graph_fingerprint
        )));
    }
    Ok(manifest)
}

fn noise_record(cfg: &RunConfig, spec: &GridSpec) -> NoiseRecord {
    NoiseRecord {
        x_kind: spec.x_kind.to_string(),
        a_kind: spec.a_kind.to_string(),
        split: spec.split.name().into(),
        pool: match cfg.grid.pool {
            PoolName::Any => "any".into(),
            PoolName::SplitAware => "split-aware".into(),
        },
        levels: spec.levels.clone(),
        taps: spec.taps.iter().map(|t| t.index()).collect(),
        seed: spec.seed,
    }
}

fn load_snapshots(dir: &Path) -> Result<Vec<Snapshot>> {
    let p = dir.join(report::SNAPSHOT_CSV);
    if !p.exists() {
        return Ok(Vec::new());
    }
    report::parse_snapshots_csv(&p, &datasets::read_to_string(&p)?)
}

fn cmd_grid(cfg: &RunConfig, model: Option<&Path>) -> Result<Value> {
    let g = load_graph(cfg)?;
    let manifest = trained_manifest(cfg, &g, model)?;
    let taps = cfg.grid_taps()?;
    let bundle = bundle::load_bundle(&cfg.out, &manifest, &taps)?;
    let spec = grid_spec(cfg, taps)?;
    let (grids, cells) = run_grid_parallel(&bundle, &g, &spec, cfg.jobs)?;
    let snaps = load_snapshots(&cfg.out)?;
    let files = report::export_report(&grids, &cells, &manifest, &noise_record(cfg, &spec), &snaps, &cfg.out)?;
    let origin: serde_json::Map<String, Value> = grids
        .iter()
        .map(|gr| (gr.meta.pipeline.to_string(), json!(gr.values[0][0])))
        .collect();
    let failed = cells.iter().filter(|c| !c.errors.is_empty()).count();
    Ok(json!({
        "command": "grid",
        "seed": cfg.seed,
        "grids": grids.len(),
        "cells": cells.len(),
        "failed_cells": failed,
        "origin_accuracy": origin,
        "files": files,
    }))
}

/// Seeded subsample of `rows` of at most `max` entries, in id order.
fn subsample(rows: &NodeSet, max: usize, seed: u64) -> NodeSet {
    if rows.len() <= max {
        return rows.clone();
    }
    let mut rng = gsr_core::random::rng_from_seed(seed);
    rand::seq::index::sample(&mut rng, rows.len(), max)
        .into_iter()
        .map(|i| rows.as_slice()[i])
        .collect()
}

fn cmd_project(cfg: &RunConfig) -> Result<Value> {
    let g = load_graph(cfg)?;
    let manifest = trained_manifest(cfg, &g, None)?;
    let taps: Vec<Tap> = cfg
        .grid_taps()?
        .into_iter()
        .filter(|t| manifest.rbms.contains_key(&t.index()))
        .collect();
    if taps.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "RBM checkpoints for the requested taps in {} (run `gsr rbm` first)",
            cfg.out.display()
        )));
    }
    let bundle: PsiBundle = bundle::load_bundle(&cfg.out, &manifest, &taps)?;
    let spec = grid_spec(cfg, taps.clone())?;
    let (nx, na) = (cfg.project.n_x, cfg.project.n_a);
    let noisy = noisy_instance(&g, &spec, nx, na)?;
    let tcfg = cfg.tsne_config();
    let rows = subsample(g.split().get(spec.split), cfg.project.max_points, derive_seed(tcfg.seed, &[0]));
    let labels: Vec<usize> = rows.iter().map(|v| g.labels()[v]).collect();
    let clean_trace = forward_phi(bundle.model(), &g)?.trace;
    let noisy_trace = forward_phi(bundle.model(), &noisy)?.trace;
    let mut jobs = Vec::new();
    for &tap in &taps {
        let denoiser = bundle.denoiser(tap).expect("loaded for every tap");
        let denoised = denoiser.apply(
            noisy_trace.tap(tap),
            bundle.gibbs_rounds(),
            bundle.sample_hidden(),
            derive_seed(bundle.seed(), &[tap.index() as u64]),
        )?;
        jobs.push((tap, Variant::Desired, clean_trace.tap(tap).select_rows(rows.as_slice())?));
        jobs.push((tap, Variant::Noisy, noisy_trace.tap(tap).select_rows(rows.as_slice())?));
        jobs.push((tap, Variant::Denoised, denoised.select_rows(rows.as_slice())?));
    }
    let results: Vec<Result<(Snapshot, f64)>> = pool(cfg.jobs)?.install(|| {
        jobs.par_iter()
            .map(|(tap, variant, z)| {
                let res = tsne_embed(z, &tcfg)?;
                let kl = res.kl_trace.last().map_or(f64::NAN, |p| p.1);
                Ok((
                    Snapshot {
                        tap: *tap,
                        variant: *variant,
                        coords: res.coords,
                        labels: labels.clone(),
                    },
                    kl,
                ))
            })
            .collect()
    });
    let mut snaps = Vec::new();
    let mut final_kl = Vec::new();
    for r in results {
        let (s, kl) = r?;
        final_kl.push((s.tap.index(), s.variant, kl));
        snaps.push(s);
    }
    let meta = SnapshotMeta {
        n_x: nx,
        n_a: na,
        x_kind: spec.x_kind.to_string(),
        a_kind: spec.a_kind.to_string(),
        split: spec.split.name().into(),
        perplexity: tcfg.perplexity,
        iterations: tcfg.iterations,
        points: rows.len(),
        seed: cfg.seed,
        final_kl,
    };
    let csv_path = cfg.out.join(report::SNAPSHOT_CSV);
    formats::atomic_write(&csv_path, report::snapshots_csv(&snaps).as_bytes())?;
    let meta_path = cfg.out.join(report::SNAPSHOT_META);
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    formats::atomic_write(&meta_path, text.as_bytes())?;
    Ok(json!({
        "command": "project",
        "seed": cfg.seed,
        "snapshots": snaps.len(),
        "points": rows.len(),
        "files": [csv_path, meta_path],
    }))
}

fn cmd_report(cfg: &RunConfig) -> Result<Value> {
    let results = ResultsBundle::load(&cfg.out.join(report::RESULTS_FILE))?;
    let grids = results.grids()?;
    if grids.is_empty() {
        return Err(Error::Other("nothing to export".into()));
    }
    let snaps = load_snapshots(&cfg.out)?;
    let mut files = report::write_grid_csvs(&grids, &cfg.out.join("grids"))?;
    let html = cfg.out.join(report::REPORT_FILE);
    formats::atomic_write(&html, report::render_html(&grids, Some(&results.manifest), &snaps).as_bytes())?;
    files.push(html);
    Ok(json!({
        "command": "report",
        "seed": results.manifest.seed,
        "grids": grids.len(),
        "snapshots": snaps.len(),
        "files": files,
    }))
}

fn cmd_verify() -> Value {
    let results = verify::run_all();
    let passed = results.iter().all(|r| r.passed);
    json!({"command": "verify", "passed": passed, "suites": results})
}
