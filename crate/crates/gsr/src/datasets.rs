//! Dataset sources: WikiCS JSON, OGB node-prediction directories, native
//! checkpoints and the synthetic SBM.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use gsr_core::graph::{generate_sbm_graph, SbmConfig};
use gsr_core::{DenseMatrix, Graph, NodeSet, SplitMasks};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

pub const DATA_DIR_ENV: &str = "GSR_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFormat {
    WikicsJson,
    OgbDir,
    NativeBinary,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wikics-json" => Ok(GraphFormat::WikicsJson),
            "ogb-dir" => Ok(GraphFormat::OgbDir),
            "native-binary" => Ok(GraphFormat::NativeBinary),
            _ => Err(Error::Usage(format!("unknown graph format '{s}'"))),
        }
    }
}

pub fn load_graph(path: &Path, format: GraphFormat) -> Result<Graph> {
    if !path.exists() {
        return Err(Error::MissingArtifact(format!("dataset path {} does not exist", path.display())));
    }
    match format {
        GraphFormat::WikicsJson => load_wikics(path),
        GraphFormat::OgbDir => load_ogb_dir(path),
        GraphFormat::NativeBinary => formats::load_graph(path),
    }
}

/// Named dataset choices of the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetId {
    Wikics,
    OgbnArxiv,
    Sbm,
}

impl DatasetId {
    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Wikics => "wikics",
            DatasetId::OgbnArxiv => "ogbn-arxiv",
            DatasetId::Sbm => "sbm",
        }
    }

    /// Location under the data directory.
    pub fn default_path(self, data_dir: &Path) -> Option<PathBuf> {
        match self {
            DatasetId::Wikics => Some(data_dir.join("wikics").join("data.json")),
            DatasetId::OgbnArxiv => Some(data_dir.join("ogbn_arxiv")),
            DatasetId::Sbm => None,
        }
    }

    pub fn format(self) -> GraphFormat {
        match self {
            DatasetId::Wikics => GraphFormat::WikicsJson,
            DatasetId::OgbnArxiv => GraphFormat::OgbDir,
            DatasetId::Sbm => GraphFormat::NativeBinary,
        }
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wikics" => Ok(DatasetId::Wikics),
            "ogbn-arxiv" | "arxiv" => Ok(DatasetId::OgbnArxiv),
            "sbm" => Ok(DatasetId::Sbm),
            _ => Err(Error::Usage(format!("unknown dataset '{s}' (expected wikics, ogbn-arxiv or sbm)"))),
        }
    }
}

/// `$GSR_DATA_DIR`, falling back to `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

pub fn load_dataset(id: DatasetId, sbm: &SbmConfig) -> Result<Graph> {
    match id.default_path(&data_dir()) {
        Some(path) => load_graph(&path, id.format()),
        None => Ok(generate_sbm_graph(sbm)?),
    }
}

/// Summary printed by `gsr data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_undirected_edges: usize,
    pub directed: bool,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub fingerprint: String,
}

impl GraphStats {
    pub fn of(g: &Graph) -> Self {
        let s = g.split();
        GraphStats {
            num_nodes: g.num_nodes(),
            num_edges: g.num_edges(),
            num_undirected_edges: g.num_undirected_edges(),
            directed: g.is_directed(),
            feature_dim: g.feature_dim(),
            num_classes: g.num_classes(),
            train: s.train.len(),
            val: s.val.len(),
            test: s.test.len(),
            fingerprint: format!("{:016x}", g.fingerprint()),
        }
    }
}

/// A mask entry: WikiCS ships booleans, some mirrors ship 0/1.
#[derive(Deserialize)]
#[serde(untagged)]
enum MaskBit {
    Bool(bool),
    Int(u8),
}

impl MaskBit {
    fn set(&self) -> bool {
        match self {
            MaskBit::Bool(b) => *b,
            MaskBit::Int(i) => *i != 0,
        }
    }
}

#[derive(Deserialize)]
struct WikicsRaw {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    links: Vec<Vec<usize>>,
    val_masks: Vec<Vec<MaskBit>>,
    test_mask: Vec<MaskBit>,
}

fn mask_to_set(path: &Path, field: &str, bits: &[MaskBit], n: usize) -> Result<NodeSet> {
    if bits.len() != n {
        return Err(Error::format(path, format!("field '{field}' has {} entries for {n} nodes", bits.len())));
    }
    Ok(NodeSet::new(bits.iter().enumerate().filter(|(_, b)| b.set()).map(|(i, _)| i).collect()))
}

/// Loads the WikiCS JSON. Split: the first validation mask, the test mask,
/// and every other node as train. Links are stored in both directions,
/// deduplicated.
pub fn load_wikics(path: &Path) -> Result<Graph> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let raw: WikicsRaw = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::format(path, format!("invalid WikiCS JSON: {e}")))?;
    parse_wikics(path, raw)
}

pub fn parse_wikics_str(path: &Path, json: &str) -> Result<Graph> {
    let raw: WikicsRaw =
        serde_json::from_str(json).map_err(|e| Error::format(path, format!("invalid WikiCS JSON: {e}")))?;
    parse_wikics(path, raw)
}

fn parse_wikics(path: &Path, raw: WikicsRaw) -> Result<Graph> {
    let n = raw.features.len();
    if raw.labels.len() != n {
        return Err(Error::format(path, format!("field 'labels' has {} entries for {n} nodes", raw.labels.len())));
    }
    if raw.links.len() != n {
        return Err(Error::format(path, format!("field 'links' has {} entries for {n} nodes", raw.links.len())));
    }
    let d = raw.features.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(n * d);
    for (i, row) in raw.features.iter().enumerate() {
        if row.len() != d {
            return Err(Error::format(path, format!("field 'features' row {i} has width {} not {d}", row.len())));
        }
        data.extend_from_slice(row);
    }
    let features = DenseMatrix::new(n, d, data)?;
    let mut edges = BTreeSet::new();
    for (u, nbrs) in raw.links.iter().enumerate() {
        for &v in nbrs {
            if v >= n {
                return Err(Error::format(path, format!("field 'links' node {u} points at {v} >= {n}")));
            }
            edges.insert((u, v));
            edges.insert((v, u));
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    let first_val = raw
        .val_masks
        .first()
        .ok_or_else(|| Error::format(path, "field 'val_masks' is empty"))?;
    let val = mask_to_set(path, "val_masks", first_val, n)?;
    let test = mask_to_set(path, "test_mask", &raw.test_mask, n)?;
    if !val.is_disjoint(&test) {
        return Err(Error::Core(gsr_core::Error::Integrity("WikiCS val and test masks overlap".into())));
    }
    let assigned = val.union(&test);
    let train = NodeSet::new((0..n).filter(|&i| !assigned.contains(i)).collect());
    let num_classes = raw.labels.iter().max().map_or(0, |&m| m + 1);
    let split = SplitMasks { train, val, test };
    Ok(Graph::from_edges(n, &edges, false, features, raw.labels, num_classes, split)?)
}

/// Opens `<dir>/<stem>.csv.gz`, falling back to `<dir>/<stem>.csv`.
fn open_csv(dir: &Path, stem: &str) -> Result<(PathBuf, Box<dyn BufRead>)> {
    let gz = dir.join(format!("{stem}.csv.gz"));
    if gz.exists() {
        let f = File::open(&gz).map_err(|e| Error::io(&gz, e))?;
        return Ok((gz, Box::new(BufReader::new(GzDecoder::new(f)))));
    }
    let plain = dir.join(format!("{stem}.csv"));
    let f = File::open(&plain).map_err(|e| Error::io(&plain, e))?;
    Ok((plain, Box::new(BufReader::new(f))))
}

fn csv_rows<T: FromStr>(dir: &Path, stem: &str) -> Result<Vec<Vec<T>>> {
    let (path, reader) = open_csv(dir, stem)?;
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<T>())
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|_| Error::format(&path, format!("line {} is not numeric", lineno + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_ids(dir: &Path, stem: &str, n: usize) -> Result<NodeSet> {
    let rows = csv_rows::<usize>(dir, stem)?;
    let ids: Vec<usize> = rows.into_iter().flatten().collect();
    if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
        return Err(Error::format(dir.join(stem), format!("node id {bad} >= {n}")));
    }
    Ok(NodeSet::new(ids))
}

/// Loads an OGB node-prediction directory: `raw/{edge,node-feat,node-label}`
/// and `split/time/{train,valid,test}`, each as `.csv.gz` or `.csv`.
/// Edges are kept as given (directed); message passing symmetrizes them.
pub fn load_ogb_dir(dir: &Path) -> Result<Graph> {
    let raw = dir.join("raw");
    let feats = csv_rows::<f64>(&raw, "node-feat")?;
    let n = feats.len();
    let d = feats.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(n * d);
    for (i, row) in feats.iter().enumerate() {
        if row.len() != d {
            return Err(Error::format(raw.join("node-feat"), format!("row {i} has width {} not {d}", row.len())));
        }
        data.extend_from_slice(row);
    }
    let features = DenseMatrix::new(n, d, data)?;
    let labels: Vec<usize> = csv_rows::<usize>(&raw, "node-label")?.into_iter().flatten().collect();
    if labels.len() != n {
        return Err(Error::format(raw.join("node-label"), format!("{} labels for {n} nodes", labels.len())));
    }
    let mut edges = Vec::new();
    for row in csv_rows::<usize>(&raw, "edge")? {
        match row.as_slice() {
            [u, v] if *u < n && *v < n => edges.push((*u, *v)),
            _ => return Err(Error::format(raw.join("edge"), format!("bad edge row {row:?}"))),
        }
    }
    let split_dir = dir.join("split").join("time");
    let train = read_ids(&split_dir, "train", n)?;
    let val = read_ids(&split_dir, "valid", n)?;
    let test = read_ids(&split_dir, "test", n)?;
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let split = SplitMasks { train, val, test };
    Ok(Graph::from_edges(n, &edges, true, features, labels, num_classes, split)?)
}

/// Reads a whole file into a string with path context.
pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const TINY: &str = r#"{
        "features": [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [1.0, 1.0]],
        "labels": [0, 1, 1, 0],
        "links": [[1], [0, 2], [1], []],
        "train_masks": [[true, false, false, false]],
        "val_masks": [[false, true, false, false], [true, false, false, false]],
        "stopping_masks": [[false, false, false, false]],
        "test_mask": [0, 0, 1, 0]
    }"#;

    #[test]
    fn wikics_merges_unassigned_into_train() {
        let g = parse_wikics_str(Path::new("tiny.json"), TINY).unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.num_undirected_edges(), 2);
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.split().train.as_slice(), &[0, 3]);
        assert_eq!(g.split().val.as_slice(), &[1]);
        assert_eq!(g.split().test.as_slice(), &[2]);
        assert_eq!(g.num_classes(), 2);
    }

    #[test]
    fn single_node_self_loop() {
        let json = r#"{"features": [[0.0]], "labels": [0], "links": [[0]],
            "val_masks": [[false]], "test_mask": [false]}"#;
        let g = parse_wikics_str(Path::new("one.json"), json).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (1, 1));
    }

    #[test]
    fn wikics_errors_name_the_field() {
        let bad = TINY.replace("\"labels\": [0, 1, 1, 0]", "\"labels\": [0, 1]");
        let err = parse_wikics_str(Path::new("x.json"), &bad).unwrap_err().to_string();
        assert!(err.contains("labels"), "{err}");
        let overlap = TINY.replace("\"test_mask\": [0, 0, 1, 0]", "\"test_mask\": [0, 1, 0, 0]");
        assert!(matches!(
            parse_wikics_str(Path::new("x.json"), &overlap),
            Err(Error::Core(gsr_core::Error::Integrity(_)))
        ));
    }

    fn write_gz(path: &Path, text: &str) {
        let f = File::create(path).unwrap();
        let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::default());
        enc.write_all(text.as_bytes()).unwrap();
        enc.finish().unwrap();
    }

    #[test]
    fn ogb_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        let split = dir.path().join("split/time");
        std::fs::create_dir_all(&raw).unwrap();
        std::fs::create_dir_all(&split).unwrap();
        write_gz(&raw.join("edge.csv.gz"), "0,1\n1,2\n2,0\n");
        write_gz(&raw.join("node-feat.csv.gz"), "0.1,0.2\n0.3,0.4\n0.5,0.6\n");
        std::fs::write(raw.join("node-label.csv"), "0\n1\n2\n").unwrap();
        write_gz(&split.join("train.csv.gz"), "0\n");
        write_gz(&split.join("valid.csv.gz"), "1\n");
        write_gz(&split.join("test.csv.gz"), "2\n");
        let g = load_graph(dir.path(), GraphFormat::OgbDir).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges(), g.feature_dim(), g.num_classes()), (3, 3, 2, 3));
        assert!(g.is_directed());
        assert_eq!(g.split().test.as_slice(), &[2]);
    }

    #[test]
    fn missing_path_is_a_missing_artifact() {
        let err = load_graph(Path::new("/nonexistent/gsr/data.json"), GraphFormat::WikicsJson).unwrap_err();
        assert!(err.is_usage());
    }
}
