//! Grid CSVs, the JSON results bundle, snapshot CSVs and the static HTML
//! report with inline SVG charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gsr_core::distortion::NoiseKind;
use gsr_core::evaluation::{AccuracyGrid, CellResult, GridMeta, PipelineId, GRID_SIZE};
use gsr_core::{Arch, DenseMatrix, Split, Tap};
use serde::{Deserialize, Serialize};

use crate::bundle::RunManifest;
use crate::error::{Error, Result};
use crate::formats::atomic_write;

pub const RESULTS_FILE: &str = "results.json";
pub const REPORT_FILE: &str = "report.html";
pub const SNAPSHOT_CSV: &str = "snapshots.csv";
pub const SNAPSHOT_META: &str = "snapshots.json";

/// Six significant digits, trailing zeros trimmed; stable across runs.
pub fn fmt_sig6(v: f64) -> String {
    if !v.is_finite() {
        return "NA".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn level_of(i: usize) -> usize {
    i * 10
}

/// 12 × 12 CSV: corner label, n_A header row, n_X header column; absent cells are `NA`.
pub fn grid_csv(grid: &AccuracyGrid) -> String {
    let mut s = String::from("n_X\\n_A");
    for j in 0..GRID_SIZE {
        let _ = write!(s, ",{}", level_of(j));
    }
    s.push('\n');
    for (i, row) in grid.values.iter().enumerate() {
        let _ = write!(s, "{}", level_of(i));
        for v in row {
            s.push(',');
            s.push_str(&v.map_or_else(|| "NA".to_string(), fmt_sig6));
        }
        s.push('\n');
    }
    s
}

pub fn write_grid_csvs(grids: &[AccuracyGrid], dir: &Path) -> Result<Vec<PathBuf>> {
    grids
        .iter()
        .map(|g| {
            let path = dir.join(format!("{}.csv", g.meta.stem()));
            atomic_write(&path, grid_csv(g).as_bytes())?;
            Ok(path)
        })
        .collect()
}

/// Serialized form of an [`AccuracyGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub stem: String,
    pub arch: String,
    pub pipeline: String,
    pub x_kind: String,
    pub a_kind: String,
    pub split: String,
    pub seed: u64,
    /// Row = n_X / 10, column = n_A / 10; null when absent.
    pub values: Vec<Vec<Option<f64>>>,
}

fn bad(what: &str, v: &str) -> Error {
    Error::Other(format!("results bundle has invalid {what} '{v}'"))
}

impl GridRecord {
    pub fn from_grid(g: &AccuracyGrid) -> Self {
        GridRecord {
            stem: g.meta.stem(),
            arch: g.meta.arch.name().into(),
            pipeline: g.meta.pipeline.to_string(),
            x_kind: g.meta.x_kind.to_string(),
            a_kind: g.meta.a_kind.to_string(),
            split: g.meta.split.name().into(),
            seed: g.meta.seed,
            values: g.values.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn to_grid(&self) -> Result<AccuracyGrid> {
        let arch: Arch = self.arch.parse().map_err(|_| bad("arch", &self.arch))?;
        let pipeline: PipelineId = self.pipeline.parse().map_err(|_| bad("pipeline", &self.pipeline))?;
        let x_kind: NoiseKind = self.x_kind.parse().map_err(|_| bad("x_kind", &self.x_kind))?;
        let a_kind: NoiseKind = self.a_kind.parse().map_err(|_| bad("a_kind", &self.a_kind))?;
        let split = match self.split.as_str() {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            s => return Err(bad("split", s)),
        };
        if self.values.len() != GRID_SIZE || self.values.iter().any(|r| r.len() != GRID_SIZE) {
            return Err(bad("grid shape", &self.stem));
        }
        let mut grid = AccuracyGrid::empty(GridMeta {
            arch,
            pipeline,
            x_kind,
            a_kind,
            split,
            seed: self.seed,
        });
        for (i, row) in self.values.iter().enumerate() {
            grid.values[i].copy_from_slice(row);
        }
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub n_x: u32,
    pub n_a: u32,
    pub instance_hash: String,
    pub errors: Vec<String>,
}

impl CellRecord {
    pub fn from_cell(c: &CellResult) -> Self {
        CellRecord {
            n_x: c.nx,
            n_a: c.na,
            instance_hash: format!("{:016x}", c.instance_hash),
            errors: c.errors.clone(),
        }
    }
}

/// Noise protocol of a grid run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub x_kind: String,
    pub a_kind: String,
    pub split: String,
    pub pool: String,
    pub levels: Vec<u32>,
    pub taps: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub manifest: RunManifest,
    pub noise: NoiseRecord,
    pub grids: Vec<GridRecord>,
    pub cells: Vec<CellRecord>,
}

impl ResultsBundle {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(format!("grid results {} (run `gsr grid` first)", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn grids(&self) -> Result<Vec<AccuracyGrid>> {
        self.grids.iter().map(GridRecord::to_grid).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Desired,
    Noisy,
    Denoised,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Desired, Variant::Noisy, Variant::Denoised];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Desired => "desired",
            Variant::Noisy => "noisy",
            Variant::Denoised => "denoised",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// 2-D projection of one tap's representation under one input variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tap: Tap,
    pub variant: Variant,
    pub coords: DenseMatrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub n_x: u32,
    pub n_a: u32,
    pub x_kind: String,
    pub a_kind: String,
    pub split: String,
    pub perplexity: f64,
    pub iterations: usize,
    pub points: usize,
    pub seed: u64,
    /// `(tap, variant, final KL)` per snapshot.
    pub final_kl: Vec<(usize, Variant, f64)>,
}

/// `tap,variant,x,y,label` rows.
pub fn snapshots_csv(snaps: &[Snapshot]) -> String {
    let mut s = String::from("tap,variant,x,y,label\n");
    for snap in snaps {
        for (row, label) in snap.coords.iter_rows().zip(&snap.labels) {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                snap.tap.index(),
                snap.variant.name(),
                fmt_sig6(row[0]),
                fmt_sig6(row[1]),
                label
            );
        }
    }
    s
}

pub fn parse_snapshots_csv(path: &Path, text: &str) -> Result<Vec<Snapshot>> {
    let mut out: Vec<(Tap, Variant, Vec<f64>, Vec<usize>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = || Error::format(path, format!("line {} is not `tap,variant,x,y,label`", lineno + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err());
        }
        let tap = f[0].parse().ok().and_then(|i| Tap::from_index(i).ok()).ok_or_else(err)?;
        let variant = Variant::parse(f[1]).ok_or_else(err)?;
        let x: f64 = f[2].parse().map_err(|_| err())?;
        let y: f64 = f[3].parse().map_err(|_| err())?;
        let label: usize = f[4].parse().map_err(|_| err())?;
        match out.last_mut() {
            Some(last) if last.0 == tap && last.1 == variant => {
                last.2.extend([x, y]);
                last.3.push(label);
            }
            _ => out.push((tap, variant, vec![x, y], vec![label])),
        }
    }
    out.into_iter()
        .map(|(tap, variant, data, labels)| {
            Ok(Snapshot {
                tap,
                variant,
                coords: DenseMatrix::new(labels.len(), 2, data)?,
                labels,
            })
        })
        .collect()
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const W: f64 = 520.0;
const H: f64 = 320.0;
const PAD: f64 = 44.0;

/// Accuracy vs n_X at fixed n_A, one series per grid.
fn line_chart(grids: &[AccuracyGrid], na_idx: usize) -> String {
    let px = |nx: usize| PAD + (W - 2.0 * PAD) * nx as f64 / 100.0;
    let py = |a: f64| H - PAD - (H - 2.0 * PAD) * a;
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = write!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for k in 0..=10 {
        let x = px(k * 10);
        let _ = write!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            H - PAD + 14.0,
            k * 10
        );
    }
    for k in 0..=4 {
        let a = k as f64 / 4.0;
        let _ = write!(
            s,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{a:.2}</text><line x1="{PAD}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#eee"/>"##,
            PAD - 4.0,
            py(a) + 3.0,
            W - PAD,
            y = py(a)
        );
    }
    let _ = write!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">n_X (%)</text>"#,
        W / 2.0,
        H - 8.0
    );
    for (gi, g) in grids.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (i, row) in g.values.iter().enumerate() {
            match row[na_idx] {
                Some(a) => {
                    let _ = write!(d, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, px(level_of(i)), py(a));
                    pen_down = true;
                    let _ = write!(
                        s,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                        px(level_of(i)),
                        py(a)
                    );
                }
                None => pen_down = false,
            }
        }
        if !d.is_empty() {
            let _ = write!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        }
        let _ = write!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            W - PAD + 4.0 - 90.0,
            PAD + 6.0 + 14.0 * gi as f64,
            W - PAD + 18.0 - 90.0,
            PAD + 15.0 + 14.0 * gi as f64,
            escape(&g.meta.pipeline.to_string())
        );
    }
    s.push_str("</svg>");
    s
}

fn scatter(snap: &Snapshot) -> String {
    let size = 240.0;
    let pad = 10.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for row in snap.coords.iter_rows() {
        for k in 0..2 {
            lo[k] = lo[k].min(row[k]);
            hi[k] = hi[k].max(row[k]);
        }
    }
    let scale = |v: f64, k: usize| {
        let span = (hi[k] - lo[k]).max(1e-12);
        pad + (size - 2.0 * pad) * (v - lo[k]) / span
    };
    let mut s = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}"><rect width="{size}" height="{size}" fill="none" stroke="#999"/>"##
    );
    for (row, &label) in snap.coords.iter_rows().zip(&snap.labels) {
        let _ = write!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="1.8" fill="{}" fill-opacity="0.7"/>"#,
            scale(row[0], 0),
            size - scale(row[1], 1),
            PALETTE[label % PALETTE.len()]
        );
    }
    s.push_str("</svg>");
    s
}

/// One section per (A-kind, n_A) with accuracy-vs-n_X curves for every
/// pipeline, followed by the snapshot triads.
pub fn render_html(grids: &[AccuracyGrid], manifest: Option<&RunManifest>, snapshots: &[Snapshot]) -> String {
    let mut s = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>gsr report</title>\
         <style>body{font-family:sans-serif;margin:2em}section{margin-bottom:2em}\
         .row{display:flex;gap:12px;flex-wrap:wrap}figure{margin:0}figcaption{font-size:12px}</style></head><body>\n",
    );
    s.push_str("<h1>Graph signal recovery report</h1>\n");
    if let Some(m) = manifest {
        let _ = writeln!(
            s,
            "<p>dataset {} · arch {} · seed {} · gibbs rounds {} · version {}</p>",
            escape(&m.dataset),
            escape(m.arch.as_deref().unwrap_or("?")),
            m.seed,
            m.gibbs_rounds,
            escape(&m.version)
        );
    }
    let mut keys: Vec<(Arch, NoiseKind, NoiseKind, Split)> = grids
        .iter()
        .map(|g| (g.meta.arch, g.meta.x_kind, g.meta.a_kind, g.meta.split))
        .collect();
    keys.sort_by_key(|k| (k.0, k.1.to_string(), k.2.to_string(), k.3));
    keys.dedup();
    for (arch, xk, ak, split) in keys {
        let group: Vec<AccuracyGrid> = grids
            .iter()
            .filter(|g| (g.meta.arch, g.meta.x_kind, g.meta.a_kind, g.meta.split) == (arch, xk, ak, split))
            .cloned()
            .collect();
        for na_idx in 0..GRID_SIZE {
            if group.iter().all(|g| g.values.iter().all(|r| r[na_idx].is_none())) {
                continue;
            }
            let _ = writeln!(
                s,
                "<section><h2>{arch} · {xk} × {ak}, n_A = {}% · {} split</h2>{}</section>",
                level_of(na_idx),
                split.name(),
                line_chart(&group, na_idx)
            );
        }
    }
    let mut taps: Vec<Tap> = snapshots.iter().map(|s| s.tap).collect();
    taps.sort();
    taps.dedup();
    if !taps.is_empty() {
        s.push_str("<h2>t-SNE snapshots</h2>\n");
    }
    for tap in taps {
        let _ = write!(s, "<section><h3>{tap}</h3><div class=\"row\">");
        for snap in snapshots.iter().filter(|x| x.tap == tap) {
            let _ = write!(
                s,
                "<figure>{}<figcaption>{} {}</figcaption></figure>",
                scatter(snap),
                tap,
                snap.variant.name()
            );
        }
        s.push_str("</div></section>\n");
    }
    s.push_str("</body></html>\n");
    s
}

/// Writes per-grid CSVs, the results bundle and the HTML page into `out_dir`.
pub fn export_report(
    grids: &[AccuracyGrid],
    cells: &[CellResult],
    manifest: &RunManifest,
    noise: &NoiseRecord,
    snapshots: &[Snapshot],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if grids.is_empty() {
        return Err(Error::Other("nothing to export".into()));
    }
    let mut written = write_grid_csvs(grids, &out_dir.join("grids"))?;
    let bundle = ResultsBundle {
        manifest: manifest.clone(),
        noise: noise.clone(),
        grids: grids.iter().map(GridRecord::from_grid).collect(),
        cells: cells.iter().map(CellRecord::from_cell).collect(),
    };
    let json = out_dir.join(RESULTS_FILE);
    let mut text = serde_json::to_string_pretty(&bundle).expect("results serialize");
    text.push('\n');
    atomic_write(&json, text.as_bytes())?;
    written.push(json);
    let html = out_dir.join(REPORT_FILE);
    atomic_write(&html, render_html(grids, Some(manifest), snapshots).as_bytes())?;
    written.push(html);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> AccuracyGrid {
        let mut g = AccuracyGrid::empty(GridMeta {
            arch: Arch::Gcn,
            pipeline: PipelineId::Psi(Tap::Z0),
            x_kind: NoiseKind::Xz,
            a_kind: NoiseKind::Az,
            split: Split::Test,
            seed: 1,
        });
        for i in 0..GRID_SIZE {
            for j in 0..GRID_SIZE {
                g.values[i][j] = Some(1.0 / (1.0 + i as f64 + 3.0 * j as f64));
            }
        }
        g.values[10][10] = None;
        g
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(0.75), "0.75");
        assert_eq!(fmt_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_sig6(0.0123456789), "0.0123457");
        assert_eq!(fmt_sig6(123.456789), "123.457");
        assert_eq!(fmt_sig6(-2.5e-7), "-0.00000025");
    }

    #[test]
    fn csv_is_twelve_by_twelve() {
        let csv = grid_csv(&grid());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12);
        assert!(lines.iter().all(|l| l.split(',').count() == 12));
        assert_eq!(lines[0], "n_X\\n_A,0,10,20,30,40,50,60,70,80,90,100");
        assert!(lines[11].ends_with(",NA"));
        assert_eq!(csv, grid_csv(&grid()));
    }

    #[test]
    fn grid_record_round_trip() {
        let g = grid();
        let rec = GridRecord::from_grid(&g);
        assert_eq!(rec.stem, "gcn_psi0_Xz_Az_test");
        let json = serde_json::to_string(&rec).unwrap();
        let back: GridRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_grid().unwrap(), g);
    }

    #[test]
    fn empty_export_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(0, "sbm", 0);
        let noise = NoiseRecord {
            x_kind: "Xz".into(),
            a_kind: "Az".into(),
            split: "test".into(),
            pool: "any".into(),
            levels: vec![],
            taps: vec![],
            seed: 0,
        };
        let err = export_report(&[], &[], &m, &noise, &[], dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "nothing to export");
    }

    #[test]
    fn snapshot_csv_round_trip() {
        let snaps = vec![
            Snapshot {
                tap: Tap::Z1,
                variant: Variant::Noisy,
                coords: DenseMatrix::from_rows(&[[0.5, -1.25], [3.0, 0.0]]).unwrap(),
                labels: vec![1, 0],
            },
            Snapshot {
                tap: Tap::Z1,
                variant: Variant::Denoised,
                coords: DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap(),
                labels: vec![2],
            },
        ];
        let csv = snapshots_csv(&snaps);
        assert!(csv.starts_with("tap,variant,x,y,label\n1,noisy,0.5,-1.25,1\n"));
        assert_eq!(parse_snapshots_csv(Path::new("s.csv"), &csv).unwrap(), snaps);
        let html = render_html(&[grid()], None, &snaps);
        assert!(html.contains("<svg") && html.contains("z1 denoised"));
    }
}
