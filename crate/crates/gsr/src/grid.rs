//! Parallel grid sweep. Cells run on a rayon pool; results are collected in
//! cell order, so the output does not depend on scheduling.

use gsr_core::evaluation::{assemble_grids, evaluate_cell, AccuracyGrid, CellResult, GridSpec};
use gsr_core::pipeline::PsiBundle;
use gsr_core::Graph;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Thread pool with `jobs` workers; 0 means one per logical core.
pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Other(format!("cannot start worker pool: {e}")))
}

pub fn run_grid_parallel(
    bundle: &PsiBundle,
    g: &Graph,
    spec: &GridSpec,
    jobs: usize,
) -> Result<(Vec<AccuracyGrid>, Vec<CellResult>)> {
    spec.validate()?;
    for &tap in &spec.taps {
        if bundle.denoiser(tap).is_none() {
            return Err(Error::MissingArtifact(format!("denoiser for {tap}")));
        }
    }
    if g.split().get(spec.split).is_empty() {
        return Err(Error::Config(format!("{} split is empty", spec.split.name())));
    }
    let cells = spec.cells();
    let results: Vec<CellResult> = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(nx, na)| evaluate_cell(bundle, g, spec, nx, na))
            .collect()
    });
    Ok((assemble_grids(bundle.model().arch, spec, &results), results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gsr_core::distortion::NoiseKind;
    use gsr_core::evaluation::run_grid;
    use gsr_core::graph::{generate_sbm_graph, SbmConfig};
    use gsr_core::nn::{train_dnn, TrainConfig};
    use gsr_core::{Arch, Split, Tap};

    #[test]
    fn parallel_matches_sequential() {
        let g = generate_sbm_graph(&SbmConfig {
            num_nodes: 80,
            ..SbmConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            hidden_dim: 8,
            ..TrainConfig::default()
        };
        let model = train_dnn(&g, Arch::Gcn, &cfg, None).unwrap();
        let bundle = PsiBundle::identity(model).unwrap();
        let mut spec = GridSpec::new(NoiseKind::Xc, NoiseKind::Ac, Split::Test, vec![Tap::Z1], 3).unwrap();
        spec.levels = vec![0, 50, 100];
        let seq = run_grid(&bundle, &g, &spec).unwrap();
        for jobs in [1, 3] {
            assert_eq!(run_grid_parallel(&bundle, &g, &spec, jobs).unwrap(), seq);
        }
    }
}
