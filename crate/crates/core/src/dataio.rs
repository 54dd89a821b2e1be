//! Feature datasets (CSV and the EMNF binary format), the synthetic
//! shifted-blobs generator, and the versioned JSON model document.
//!
//! EMNF layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `EMNF` |
//! | 2 | version (u16, = 1) |
//! | 2 | flags (u16, bit 0 = labels present) |
//! | 4 | n_samples (u32) |
//! | 4 | dim (u32) |
//! | 4 | class_count (u32, 0 if unlabeled) |
//! | 8·n·d | features, f64 row-major |
//! | 4·n | labels, i32 (only when flagged) |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EmnError, Result};
use crate::inference::EmnModel;
use crate::matrix::Matrix;
use crate::memory::{GaussianClassMemory, HyperParams, MemoryStore};
use crate::topology::{NetworkTopology, TopologyConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    /// Declared class count, when known.
    pub class_count: Option<usize>,
    pub domain_tag: String,
}

impl FeatureDataset {
    pub fn new(features: Matrix, labels: Option<Vec<usize>>, domain_tag: impl Into<String>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(EmnError::dim(features.rows(), l.len(), "label count"));
            }
        }
        let class_count = labels.as_ref().map(|l| l.iter().max().map_or(0, |&m| m + 1));
        Ok(FeatureDataset {
            features,
            labels,
            class_count,
            domain_tag: domain_tag.into(),
        })
    }

    /// Declares the class count, checking every label against it.
    pub fn with_class_count(mut self, class_count: usize) -> Result<Self> {
        if let Some(l) = &self.labels {
            if let Some(&bad) = l.iter().find(|&&x| x >= class_count) {
                return Err(EmnError::LabelRange {
                    label: bad as i64,
                    class_count,
                });
            }
        }
        self.class_count = Some(class_count);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or(EmnError::MissingLabels)
    }

    pub fn without_labels(&self) -> FeatureDataset {
        FeatureDataset {
            labels: None,
            class_count: None,
            ..self.clone()
        }
    }
}

fn domain_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// CSV

pub fn read_csv(path: &Path) -> Result<FeatureDataset> {
    let file = File::open(path).map_err(|e| EmnError::io(path, e))?;
    read_csv_from(BufReader::new(file), domain_from_path(path))
}

pub fn read_csv_from<R: Read>(reader: R, domain_tag: String) -> Result<FeatureDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let parse_err = |line: u64, message: String| EmnError::Parse { line, message };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let label_col = headers.iter().position(|h| h.trim() == "label");
    let width = headers.len();
    let dim = width - usize::from(label_col.is_some());
    if dim == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut data = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        for (c, field) in rec.iter().enumerate() {
            let field = field.trim();
            if Some(c) == label_col {
                let v: usize = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("invalid label {field:?}")))?;
                labels.as_mut().unwrap().push(v);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("invalid number {field:?} in column {c}")))?;
                data.push(v);
            }
        }
    }
    let rows = data.len() / dim;
    FeatureDataset::new(Matrix::from_vec(rows, dim, data)?, labels, domain_tag)
}

pub fn write_csv(dataset: &FeatureDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| EmnError::io(path, e))?;
    write_csv_to(dataset, BufWriter::new(file)).map_err(|e| match e {
        EmnError::Io { source, .. } => EmnError::io(path, source),
        other => other,
    })
}

pub fn write_csv_to<W: Write>(dataset: &FeatureDataset, out: W) -> Result<()> {
    let wrap = |e: csv::Error| EmnError::io("<output>", e.into());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header: Vec<String> = (0..dataset.dim()).map(|i| format!("f{i}")).collect();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(wrap)?;
    for (b, row) in dataset.features.iter_rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(l) = &dataset.labels {
            rec.push(l[b].to_string());
        }
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| EmnError::io("<output>", e))
}

// ---------------------------------------------------------------------------
// EMNF binary

pub const EMNF_MAGIC: [u8; 4] = *b"EMNF";
pub const EMNF_VERSION: u16 = 1;
const EMNF_HEADER_LEN: usize = 20;

pub fn encode_emnf(dataset: &FeatureDataset) -> Result<Vec<u8>> {
    let n = dataset.len();
    let d = dataset.dim();
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| EmnError::Usage(format!("{what} {v} does not fit in 32 bits")))
    };
    let mut buf = Vec::with_capacity(EMNF_HEADER_LEN + n * d * 8 + n * 4);
    buf.extend_from_slice(&EMNF_MAGIC);
    buf.extend_from_slice(&EMNF_VERSION.to_le_bytes());
    let flags: u16 = u16::from(dataset.labels.is_some());
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&to_u32(n, "n_samples")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(d, "dim")?.to_le_bytes());
    let classes = if dataset.labels.is_some() {
        dataset.class_count.unwrap_or(0)
    } else {
        0
    };
    buf.extend_from_slice(&to_u32(classes, "class_count")?.to_le_bytes());
    for v in dataset.features.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &dataset.labels {
        for &l in labels {
            let l = i32::try_from(l).map_err(|_| EmnError::Usage(format!("label {l} does not fit in i32")))?;
            buf.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_emnf(bytes: &[u8], domain_tag: String) -> Result<FeatureDataset> {
    if bytes.len() < 4 {
        return Err(EmnError::Truncation(format!(
            "{} bytes, header needs {EMNF_HEADER_LEN}",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != EMNF_MAGIC {
        return Err(EmnError::Magic { found: magic });
    }
    if bytes.len() < EMNF_HEADER_LEN {
        return Err(EmnError::Truncation(format!(
            "{} bytes, header needs {EMNF_HEADER_LEN}",
            bytes.len()
        )));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != EMNF_VERSION {
        return Err(EmnError::Version(version));
    }
    let flags = u16_at(6);
    let labeled = flags & 1 == 1;
    let n = u32_at(8) as usize;
    let d = u32_at(12) as usize;
    let class_count = u32_at(16) as usize;

    let feature_bytes = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| EmnError::Truncation("declared size overflows".into()))?;
    let label_bytes = if labeled { n * 4 } else { 0 };
    let expected = EMNF_HEADER_LEN + feature_bytes + label_bytes;
    if bytes.len() < expected {
        return Err(EmnError::Truncation(format!(
            "{} bytes, declared layout needs {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(EmnError::Truncation(format!(
            "{} trailing bytes beyond declared layout",
            bytes.len() - expected
        )));
    }

    let body = &bytes[EMNF_HEADER_LEN..];
    let data: Vec<f64> = body[..feature_bytes]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = if labeled {
        let mut out = Vec::with_capacity(n);
        for c in body[feature_bytes..].chunks_exact(4) {
            let l = i32::from_le_bytes(c.try_into().unwrap());
            if l < 0 || (class_count > 0 && l as usize >= class_count) {
                return Err(EmnError::LabelRange {
                    label: l as i64,
                    class_count,
                });
            }
            out.push(l as usize);
        }
        Some(out)
    } else {
        None
    };
    let mut ds = FeatureDataset::new(Matrix::from_vec(n, d, data)?, labels, domain_tag)?;
    if labeled && class_count > 0 {
        ds.class_count = Some(class_count);
    }
    Ok(ds)
}

pub fn read_emnf(path: &Path) -> Result<FeatureDataset> {
    let bytes = std::fs::read(path).map_err(|e| EmnError::io(path, e))?;
    decode_emnf(&bytes, domain_from_path(path))
}

pub fn write_emnf(dataset: &FeatureDataset, path: &Path) -> Result<()> {
    let bytes = encode_emnf(dataset)?;
    std::fs::write(path, bytes).map_err(|e| EmnError::io(path, e))
}

// ---------------------------------------------------------------------------
// Synthetic domain shift

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub class_count: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Standard deviation of each class-mean coordinate.
    pub class_mean_scale: f64,
    /// Standard deviation of the isotropic within-class noise.
    pub within_class_spread: f64,
    /// Length of the translation applied to every target sample.
    pub shift_vector_norm: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(EmnError::Config("synthetic task needs at least 2 classes".into()));
        }
        if self.dim == 0 || self.samples_per_class == 0 {
            return Err(EmnError::Config("dim and samples_per_class must be positive".into()));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.class_mean_scale) || !positive(self.within_class_spread) {
            return Err(EmnError::Config(
                "class_mean_scale and within_class_spread must be positive".into(),
            ));
        }
        if !(self.shift_vector_norm >= 0.0 && self.shift_vector_norm.is_finite()) {
            return Err(EmnError::Config("shift_vector_norm must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gaussian blobs in two domains. Class means, then the shared shift
/// direction, then source rows, then target rows are drawn from one
/// `ChaCha8Rng` stream. Rows are grouped by class.
pub fn synth_shifted_blobs(cfg: &SynthConfig) -> Result<(FeatureDataset, FeatureDataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mean_dist = Normal::new(0.0, cfg.class_mean_scale).map_err(|e| EmnError::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.within_class_spread).map_err(|e| EmnError::Config(e.to_string()))?;

    let means: Vec<Vec<f64>> = (0..cfg.class_count)
        .map(|_| (0..cfg.dim).map(|_| mean_dist.sample(&mut rng)).collect())
        .collect();

    let mut direction: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        direction[0] = 1.0;
    } else {
        direction.iter_mut().for_each(|v| *v /= norm);
    }
    let shift: Vec<f64> = direction.iter().map(|v| v * cfg.shift_vector_norm).collect();

    let draw = |offset: Option<&[f64]>, rng: &mut ChaCha8Rng| {
        let n = cfg.class_count * cfg.samples_per_class;
        let mut data = Vec::with_capacity(n * cfg.dim);
        let mut labels = Vec::with_capacity(n);
        for (k, mean) in means.iter().enumerate() {
            for _ in 0..cfg.samples_per_class {
                for (j, m) in mean.iter().enumerate() {
                    let s = offset.map_or(0.0, |o| o[j]);
                    data.push(m + noise.sample(rng) + s);
                }
                labels.push(k);
            }
        }
        (data, labels)
    };
    let (src, src_labels) = draw(None, &mut rng);
    let (tgt, tgt_labels) = draw(Some(&shift), &mut rng);

    let rows = cfg.class_count * cfg.samples_per_class;
    let source = FeatureDataset::new(Matrix::from_vec(rows, cfg.dim, src)?, Some(src_labels), "source")?
        .with_class_count(cfg.class_count)?;
    let target = FeatureDataset::new(Matrix::from_vec(rows, cfg.dim, tgt)?, Some(tgt_labels), "target")?
        .with_class_count(cfg.class_count)?;
    Ok((source, target))
}

// ---------------------------------------------------------------------------
// Model document

pub const MODEL_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub config: TopologyConfig,
    /// `[source, target]` pairs grouped by target node.
    pub edges: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDoc {
    pub units: Vec<GaussianClassMemory>,
}

#[derive(Serialize)]
struct PayloadRef<'a> {
    schema_version: u64,
    class_count: usize,
    hyper: &'a HyperParams,
    topology: &'a TopologyDoc,
    memory: &'a MemoryDoc,
    metadata: &'a BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    schema_version: u64,
    class_count: usize,
    hyper: HyperParams,
    topology: TopologyDoc,
    memory: MemoryDoc,
    metadata: BTreeMap<String, String>,
    /// CRC-32 of the compact JSON encoding of every other field, as 8 hex digits.
    checksum: String,
}

impl ModelDocument {
    fn payload_checksum(&self) -> Result<u32> {
        let payload = PayloadRef {
            schema_version: self.schema_version,
            class_count: self.class_count,
            hyper: &self.hyper,
            topology: &self.topology,
            memory: &self.memory,
            metadata: &self.metadata,
        };
        let bytes = serde_json::to_vec(&payload).map_err(|e| EmnError::Model(e.to_string()))?;
        Ok(crc32fast::hash(&bytes))
    }
}

pub fn topology_to_doc(t: &NetworkTopology) -> TopologyDoc {
    let (edges, weights) = t.edges().map(|(s, d, w)| ([s, d], w)).unzip();
    TopologyDoc {
        config: *t.config(),
        edges,
        weights,
    }
}

pub fn topology_from_doc(doc: &TopologyDoc) -> Result<NetworkTopology> {
    if doc.edges.len() != doc.weights.len() {
        return Err(EmnError::Model("edge and weight counts differ".into()));
    }
    let n = doc.config.node_count();
    let mut preds = vec![Vec::new(); n];
    for (&[src, dst], &w) in doc.edges.iter().zip(&doc.weights) {
        if dst >= n {
            return Err(EmnError::Model(format!("edge target {dst} out of range")));
        }
        preds[dst].push((src, w));
    }
    NetworkTopology::from_predecessors(doc.config, preds).map_err(|e| EmnError::Model(e.to_string()))
}

pub fn model_to_json(model: &EmnModel) -> Result<String> {
    let mut doc = ModelDocument {
        schema_version: MODEL_SCHEMA_VERSION,
        class_count: model.class_count(),
        hyper: *model.hyper(),
        topology: topology_to_doc(&model.topology),
        memory: MemoryDoc {
            units: model.store.units.clone(),
        },
        metadata: model.metadata.clone(),
        checksum: String::new(),
    };
    doc.checksum = format!("{:08x}", doc.payload_checksum()?);
    serde_json::to_string_pretty(&doc).map_err(|e| EmnError::Model(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<EmnModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| EmnError::Model(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| EmnError::Model("missing schema_version".into()))?;
    if version != MODEL_SCHEMA_VERSION {
        return Err(EmnError::SchemaVersion {
            found: version,
            supported: MODEL_SCHEMA_VERSION,
        });
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| EmnError::Model(e.to_string()))?;
    let stored = u32::from_str_radix(&doc.checksum, 16)
        .map_err(|_| EmnError::Model(format!("malformed checksum {:?}", doc.checksum)))?;
    let computed = doc.payload_checksum()?;
    if stored != computed {
        return Err(EmnError::Integrity { stored, computed });
    }

    let topology = topology_from_doc(&doc.topology)?;
    let store = MemoryStore {
        units: doc.memory.units,
        class_count: doc.class_count,
        hyper: doc.hyper,
    };
    if store
        .units
        .iter()
        .any(|u| u.sigma.len() != u.mu.len() || u.initialized.len() != u.mu.len())
    {
        return Err(EmnError::Model("memory unit vectors have unequal lengths".into()));
    }
    let mut model = EmnModel::from_parts(topology, store).map_err(|e| EmnError::Model(e.to_string()))?;
    model.metadata = doc.metadata;
    Ok(model)
}

pub fn save_model(model: &EmnModel, path: &Path) -> Result<()> {
    let text = model_to_json(model)?;
    std::fs::write(path, text).map_err(|e| EmnError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EmnModel> {
    let text = std::fs::read_to_string(path).map_err(|e| EmnError::io(path, e))?;
    model_from_json(&text)
}
