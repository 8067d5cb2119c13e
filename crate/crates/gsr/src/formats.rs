//! Versioned little-endian binary checkpoints.
//!
//! Every file is `magic[4] | version u32 | payload_len u64 | payload | fnv64(payload)`.
//! Magics: `GSR1` graph, `GSRM` classifier, `GSRR` RBM + scaler, `GSRX` dense matrix.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use gsr_core::graph::{Fnv, SplitMasks};
use gsr_core::nn::{BatchNormState, Linear, OptimizerKind, TrainConfig};
use gsr_core::rbm::RbmTrainConfig;
use gsr_core::{Arch, DenseMatrix, DnnModel, GbRbm, Graph, NodeSet, Scaler};

use crate::error::{Error, Result};

pub const GRAPH_MAGIC: [u8; 4] = *b"GSR1";
pub const MODEL_MAGIC: [u8; 4] = *b"GSRM";
pub const RBM_MAGIC: [u8; 4] = *b"GSRR";
pub const MATRIX_MAGIC: [u8; 4] = *b"GSRX";
pub const FORMAT_VERSION: u32 = 1;

/// Writes via a temp file in the target directory, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = Fnv::new();
    h.write_bytes(bytes);
    h.finish()
}

fn frame(magic: [u8; 4], payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 24);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out
}

fn unframe<'a>(path: &Path, magic: [u8; 4], bytes: &'a [u8]) -> Result<&'a [u8]> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < 24 {
        return Err(bad(format!("file of {} bytes is too short", bytes.len())));
    }
    if bytes[..4] != magic {
        return Err(bad(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 24 + len {
        return Err(bad(format!("payload length {len} does not match file size {}", bytes.len())));
    }
    let payload = &bytes[16..16 + len];
    let stored = u64::from_le_bytes(bytes[16 + len..].try_into().expect("8 bytes"));
    if stored != checksum(payload) {
        return Err(bad("checksum mismatch".into()));
    }
    Ok(payload)
}

struct Enc(Vec<u8>);

impl Enc {
    fn new() -> Self {
        Enc(Vec::new())
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.write_u64::<LE>(v).expect("vec write");
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.write_f64::<LE>(v).expect("vec write");
    }
    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.usize(x));
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &DenseMatrix) {
        self.usize(m.rows());
        self.usize(m.cols());
        m.as_slice().iter().for_each(|&x| self.f64(x));
    }
    fn opt_matrix(&mut self, m: Option<&DenseMatrix>) {
        match m {
            Some(m) => {
                self.u8(1);
                self.matrix(m);
            }
            None => self.u8(0),
        }
    }
}

struct Dec<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl<'a> Dec<'a> {
    fn new(path: &'a Path, payload: &'a [u8]) -> Self {
        Dec {
            cur: Cursor::new(payload),
            path,
        }
    }
    fn err(&self, what: &str) -> Error {
        Error::format(self.path, format!("truncated or corrupt payload while reading {what}"))
    }
    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }
    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.err("u8"))
    }
    fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LE>().map_err(|_| self.err("u64"))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err("length"))
    }
    fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LE>().map_err(|_| self.err("f64"))
    }
    /// Length prefix checked against the bytes left, so corrupt lengths
    /// cannot trigger huge allocations.
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(elem).is_none_or(|b| b > self.remaining()) {
            return Err(self.err("length prefix"));
        }
        Ok(n)
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Result<DenseMatrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let total = rows.checked_mul(cols).ok_or_else(|| self.err("matrix shape"))?;
        if total.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(self.err("matrix data"));
        }
        let data = (0..total).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DenseMatrix::new(rows, cols, data)?)
    }
    fn opt_matrix(&mut self) -> Result<Option<DenseMatrix>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.matrix()?)),
            t => Err(Error::format(self.path, format!("invalid option tag {t}"))),
        }
    }
    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(self.path, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn encode_graph(g: &Graph) -> Vec<u8> {
    let mut e = Enc::new();
    e.usize(g.num_nodes());
    e.u8(g.is_directed() as u8);
    e.usizes(g.offsets());
    e.usizes(g.targets());
    e.matrix(g.features());
    e.usizes(g.labels());
    e.usize(g.num_classes());
    let s = g.split();
    for set in [&s.train, &s.val, &s.test] {
        e.usizes(set.as_slice());
    }
    frame(GRAPH_MAGIC, e.0)
}

pub fn decode_graph(path: &Path, bytes: &[u8]) -> Result<Graph> {
    let payload = unframe(path, GRAPH_MAGIC, bytes)?;
    let mut d = Dec::new(path, payload);
    let n = d.usize()?;
    let directed = match d.u8()? {
        0 => false,
        1 => true,
        t => return Err(Error::format(path, format!("invalid directed flag {t}"))),
    };
    let offsets = d.usizes()?;
    let targets = d.usizes()?;
    let features = d.matrix()?;
    let labels = d.usizes()?;
    let num_classes = d.usize()?;
    let mut sets = Vec::with_capacity(3);
    for _ in 0..3 {
        let ids = d.usizes()?;
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(path, "split ids are not strictly increasing"));
        }
        sets.push(NodeSet::new(ids));
    }
    d.finish()?;
    let test = sets.pop().expect("3 sets");
    let val = sets.pop().expect("3 sets");
    let train = sets.pop().expect("3 sets");
    let split = SplitMasks { train, val, test };
    Graph::new(n, offsets, targets, directed, features, labels, num_classes, split)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_graph(path: &Path, g: &Graph) -> Result<()> {
    atomic_write(path, &encode_graph(g))
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    decode_graph(path, &read_file(path)?)
}

fn enc_train_config(e: &mut Enc, c: &TrainConfig) {
    e.usize(c.epochs);
    e.f64(c.learning_rate);
    e.f64(c.dropout_p);
    e.usize(c.hidden_dim);
    e.u64(c.seed);
    e.u8(match c.optimizer {
        OptimizerKind::Adam => 0,
        OptimizerKind::Sgd => 1,
    });
}

fn dec_train_config(d: &mut Dec) -> Result<TrainConfig> {
    Ok(TrainConfig {
        epochs: d.usize()?,
        learning_rate: d.f64()?,
        dropout_p: d.f64()?,
        hidden_dim: d.usize()?,
        seed: d.u64()?,
        optimizer: match d.u8()? {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::Sgd,
            t => return Err(Error::format(d.path, format!("invalid optimizer tag {t}"))),
        },
    })
}

pub fn encode_model(m: &DnnModel) -> Vec<u8> {
    let mut e = Enc::new();
    e.u8(m.arch.tag());
    e.usize(m.input_dim);
    e.usize(m.hidden_dim);
    e.usize(m.num_classes);
    e.f64(m.dropout_p);
    enc_train_config(&mut e, &m.config);
    for l in &m.layers {
        e.matrix(&l.weight);
        e.opt_matrix(l.weight_neigh.as_ref());
        e.f64s(&l.bias);
    }
    for bn in &m.norms {
        e.f64s(&bn.gamma);
        e.f64s(&bn.beta);
        e.f64s(&bn.running_mean);
        e.f64s(&bn.running_var);
        e.f64(bn.momentum);
        e.f64(bn.epsilon);
    }
    e.opt_matrix(m.embeddings.as_ref());
    frame(MODEL_MAGIC, e.0)
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<DnnModel> {
    let payload = unframe(path, MODEL_MAGIC, bytes)?;
    let mut d = Dec::new(path, payload);
    let tag = d.u8()?;
    let arch = Arch::from_tag(tag).ok_or_else(|| Error::format(path, format!("unknown architecture tag {tag}")))?;
    let input_dim = d.usize()?;
    let hidden_dim = d.usize()?;
    let num_classes = d.usize()?;
    let dropout_p = d.f64()?;
    let config = dec_train_config(&mut d)?;
    let mut layer = || -> Result<Linear> {
        Ok(Linear {
            weight: d.matrix()?,
            weight_neigh: d.opt_matrix()?,
            bias: d.f64s()?,
        })
    };
    let layers = [layer()?, layer()?, layer()?];
    let mut norm = || -> Result<BatchNormState> {
        Ok(BatchNormState {
            gamma: d.f64s()?,
            beta: d.f64s()?,
            running_mean: d.f64s()?,
            running_var: d.f64s()?,
            momentum: d.f64()?,
            epsilon: d.f64()?,
        })
    };
    let norms = [norm()?, norm()?];
    let embeddings = d.opt_matrix()?;
    d.finish()?;
    let model = DnnModel {
        arch,
        layers,
        norms,
        dropout_p,
        input_dim,
        hidden_dim,
        num_classes,
        embeddings,
        config,
    };
    model.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(model)
}

pub fn save_model(path: &Path, m: &DnnModel) -> Result<()> {
    atomic_write(path, &encode_model(m))
}

pub fn load_model(path: &Path) -> Result<DnnModel> {
    decode_model(path, &read_file(path)?)
}

pub fn encode_rbm(rbm: &GbRbm, scaler: &Scaler, cfg: &RbmTrainConfig) -> Vec<u8> {
    let mut e = Enc::new();
    e.matrix(&rbm.weights);
    e.f64s(&rbm.visible_bias);
    e.f64s(&rbm.hidden_bias);
    e.f64s(&rbm.sigma);
    e.f64s(&scaler.mean);
    e.f64s(&scaler.std);
    e.usize(cfg.hidden_units);
    e.usize(cfg.epochs);
    e.usize(cfg.batch_size);
    e.usize(cfg.cd_steps);
    e.f64(cfg.lr);
    e.u64(cfg.seed);
    frame(RBM_MAGIC, e.0)
}

pub fn decode_rbm(path: &Path, bytes: &[u8]) -> Result<(GbRbm, Scaler, RbmTrainConfig)> {
    let payload = unframe(path, RBM_MAGIC, bytes)?;
    let mut d = Dec::new(path, payload);
    let rbm = GbRbm {
        weights: d.matrix()?,
        visible_bias: d.f64s()?,
        hidden_bias: d.f64s()?,
        sigma: d.f64s()?,
    };
    let scaler = Scaler {
        mean: d.f64s()?,
        std: d.f64s()?,
    };
    let cfg = RbmTrainConfig {
        hidden_units: d.usize()?,
        epochs: d.usize()?,
        batch_size: d.usize()?,
        cd_steps: d.usize()?,
        lr: d.f64()?,
        seed: d.u64()?,
    };
    d.finish()?;
    rbm.validate().map_err(|e| Error::format(path, e.to_string()))?;
    if scaler.dim() != rbm.visible_dim() || scaler.std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::format(path, "scaler does not match the RBM"));
    }
    Ok((rbm, scaler, cfg))
}

pub fn save_rbm(path: &Path, rbm: &GbRbm, scaler: &Scaler, cfg: &RbmTrainConfig) -> Result<()> {
    atomic_write(path, &encode_rbm(rbm, scaler, cfg))
}

pub fn load_rbm(path: &Path) -> Result<(GbRbm, Scaler, RbmTrainConfig)> {
    decode_rbm(path, &read_file(path)?)
}

pub fn encode_matrix(m: &DenseMatrix) -> Vec<u8> {
    let mut e = Enc::new();
    e.matrix(m);
    frame(MATRIX_MAGIC, e.0)
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<DenseMatrix> {
    let payload = unframe(path, MATRIX_MAGIC, bytes)?;
    let mut d = Dec::new(path, payload);
    let m = d.matrix()?;
    d.finish()?;
    Ok(m)
}

pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    atomic_write(path, &encode_matrix(m))
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    decode_matrix(path, &read_file(path)?)
}
