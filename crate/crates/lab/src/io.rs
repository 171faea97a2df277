//! On-disk formats: interaction logs, pre-encoded utterance vectors,
//! ground-truth records, node metadata and generic JSON/TOML helpers.
//!
//! # Interaction log
//!
//! Either comma-separated text with the header `cid,sid,utterance,defect`
//! (columns in any order, no others), or JSON lines, one object per row with
//! exactly those four keys. `defect` must be `0` or `1`; ids must be
//! non-empty. Files ending in `.jsonl`, `.ndjson` or `.json` are read as JSON
//! lines, everything else as CSV.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pdrfe_core::encoder::LookupEncoder;
use pdrfe_core::graph::{Interaction, NodeCatalog, NodeFeatures};
use pdrfe_core::tensor::Tensor;
use pdrfe_core::synth::{SynthData, TruthRow, CUSTOMER_METADATA, SKILL_METADATA};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const LOG_COLUMNS: [&str; 4] = ["cid", "sid", "utterance", "defect"];
pub const CUSTOMER_ATTRIBUTES: [&str; 4] = ["wbr_cor", "is_prime", "is_amu", "is_smart_home_cust"];
pub const SKILL_ATTRIBUTES: [&str; 4] = ["skill_category", "skill_type", "skill_subcategory", "reporting_category"];

fn is_json_lines(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "ndjson" | "json"))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| LabError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| LabError::io(path, e))
}

fn check_row(path: &Path, line: usize, row: &Interaction) -> Result<()> {
    if row.cid.is_empty() || row.sid.is_empty() {
        return Err(LabError::format(path, line, "empty cid or sid"));
    }
    if row.defect > 1 {
        return Err(LabError::format(path, line, format!("defect must be 0 or 1, got {}", row.defect)));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    cid: String,
    sid: String,
    utterance: String,
    defect: u8,
}

/// Iterates non-blank lines of a JSON-lines file as `(line number, value)`.
fn json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| LabError::format(path, i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn write_json_lines<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| LabError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| LabError::io(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_interactions(path: &Path) -> Result<Vec<Interaction>> {
    let rows = if is_json_lines(path) { read_log_json(path)? } else { read_log_csv(path)? };
    Ok(rows)
}

fn read_log_json(path: &Path) -> Result<Vec<Interaction>> {
    let mut rows = Vec::new();
    for (line, r) in json_lines::<JsonRow>(path)? {
        let row = Interaction { cid: r.cid, sid: r.sid, utterance: r.utterance, defect: r.defect };
        check_row(path, line, &row)?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_log_csv(path: &Path) -> Result<Vec<Interaction>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?);
    let headers = reader.headers().map_err(|e| LabError::format(path, 1, e.to_string()))?.clone();
    let mut index = [usize::MAX; 4];
    for (i, h) in headers.iter().enumerate() {
        let Some(slot) = LOG_COLUMNS.iter().position(|c| *c == h.trim()) else {
            return Err(LabError::format(path, 1, format!("unexpected column `{h}`; expected {LOG_COLUMNS:?}")));
        };
        if index[slot] != usize::MAX {
            return Err(LabError::format(path, 1, format!("duplicate column `{h}`")));
        }
        index[slot] = i;
    }
    if let Some(missing) = LOG_COLUMNS.iter().zip(index).find(|(_, i)| *i == usize::MAX) {
        return Err(LabError::format(path, 1, format!("missing column `{}`", missing.0)));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            LabError::format(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |slot: usize| record.get(index[slot]).unwrap_or("").to_string();
        let defect = match field(3).trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(LabError::format(path, line, format!("defect must be 0 or 1, got `{other}`"))),
        };
        let row = Interaction { cid: field(0), sid: field(1), utterance: field(2), defect };
        check_row(path, line, &row)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_interactions(path: &Path, rows: &[Interaction]) -> Result<()> {
    if is_json_lines(path) {
        return write_json_lines(path, rows);
    }
    // Explicit header so an empty log still reads back.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    let io_err = |e: csv::Error| LabError::io(path, e.into());
    w.write_record(["cid", "sid", "utterance", "defect"]).map_err(io_err)?;
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodedUtterance {
    utterance_id: String,
    vector: Vec<f64>,
}

/// Reads `{utterance_id, vector}` lines. The id is matched against the
/// utterance text of each interaction.
pub fn read_pre_encoded(path: &Path) -> Result<LookupEncoder> {
    let mut vectors = BTreeMap::new();
    let mut dim = None;
    for (line, row) in json_lines::<EncodedUtterance>(path)? {
        let d = *dim.get_or_insert(row.vector.len());
        if d == 0 || row.vector.len() != d {
            return Err(LabError::format(path, line, format!("vector of length {}, expected {d}", row.vector.len())));
        }
        if vectors.insert(row.utterance_id.clone(), row.vector).is_some() {
            return Err(LabError::format(path, line, format!("duplicate utterance_id `{}`", row.utterance_id)));
        }
    }
    let dim = dim.ok_or_else(|| LabError::format(path, 0, "no vectors"))?;
    Ok(LookupEncoder::new(dim, vectors)?)
}

pub fn write_pre_encoded(path: &Path, vectors: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    write_json_lines(
        path,
        vectors.iter().map(|(k, v)| EncodedUtterance { utterance_id: k.clone(), vector: v.clone() }),
    )
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let rows: Vec<TruthRow> = json_lines(path)?.into_iter().map(|(_, r)| r).collect();
    if let Some((i, r)) = rows.iter().enumerate().find(|(i, r)| r.row != *i) {
        return Err(LabError::format(path, i + 1, format!("truth rows out of order: row {} at position {i}", r.row)));
    }
    Ok(rows)
}

pub fn write_truth(path: &Path, rows: &[TruthRow]) -> Result<()> {
    write_json_lines(path, rows)
}

/// Categorical node attributes, keyed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeMetadata {
    pub customer_attributes: Vec<String>,
    pub customer_cardinalities: Vec<usize>,
    pub skill_attributes: Vec<String>,
    pub skill_cardinalities: Vec<usize>,
    pub customers: BTreeMap<String, Vec<usize>>,
    pub skills: BTreeMap<String, Vec<usize>>,
}

impl NodeMetadata {
    pub fn from_synth(data: &SynthData) -> Self {
        let names = |a: &[&str]| a.iter().map(|s| s.to_string()).collect();
        NodeMetadata {
            customer_attributes: names(&CUSTOMER_ATTRIBUTES),
            customer_cardinalities: CUSTOMER_METADATA.to_vec(),
            skill_attributes: names(&SKILL_ATTRIBUTES),
            skill_cardinalities: SKILL_METADATA.to_vec(),
            customers: data.customers.iter().cloned().zip(data.customer_metadata.iter().cloned()).collect(),
            skills: data.skills.iter().cloned().zip(data.skill_metadata.iter().cloned()).collect(),
        }
    }

    /// Catalog declaring every node listed here, in id order.
    pub fn catalog(&self) -> Result<NodeCatalog> {
        Ok(NodeCatalog::new(self.customers.keys().cloned().collect(), self.skills.keys().cloned().collect())?)
    }

    /// Concatenated one-hot features in catalog order.
    pub fn features(&self, catalog: &NodeCatalog) -> Result<NodeFeatures> {
        let lookup = |ids: &[String], table: &BTreeMap<String, Vec<usize>>, kind: &str| -> Result<Vec<Vec<usize>>> {
            ids.iter()
                .map(|id| table.get(id).cloned().ok_or_else(|| LabError::Config(format!("no metadata for {kind} `{id}`"))))
                .collect()
        };
        let c = lookup(catalog.customers(), &self.customers, "customer")?;
        let s = lookup(catalog.skills(), &self.skills, "skill")?;
        Ok(NodeFeatures {
            customer: NodeFeatures::one_hot(&c, &self.customer_cardinalities)?,
            skill: NodeFeatures::one_hot(&s, &self.skill_cardinalities)?,
        })
    }
}

/// Dense initial node features keyed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeVectors {
    pub customers: BTreeMap<String, Vec<f64>>,
    pub skills: BTreeMap<String, Vec<f64>>,
}

impl NodeVectors {
    pub fn from_features(catalog: &NodeCatalog, f: &NodeFeatures) -> Self {
        let rows = |ids: &[String], t: &Tensor| -> BTreeMap<String, Vec<f64>> {
            let w = t.cols();
            ids.iter().cloned().zip(t.data().chunks(w.max(1)).map(<[f64]>::to_vec)).collect()
        };
        NodeVectors { customers: rows(catalog.customers(), &f.customer), skills: rows(catalog.skills(), &f.skill) }
    }

    /// Feature matrices in catalog order; every catalog node must be present
    /// and all vectors of one kind equally wide.
    pub fn features(&self, catalog: &NodeCatalog) -> Result<NodeFeatures> {
        let table = |ids: &[String], map: &BTreeMap<String, Vec<f64>>, kind: &str| -> Result<Tensor> {
            let width = map.values().next().map_or(0, Vec::len);
            let mut data = Vec::with_capacity(ids.len() * width);
            for id in ids {
                let v = map.get(id).ok_or_else(|| LabError::Config(format!("no node features for {kind} `{id}`")))?;
                if v.len() != width {
                    return Err(LabError::Config(format!("{kind} `{id}` has {} features, expected {width}", v.len())));
                }
                data.extend_from_slice(v);
            }
            Ok(Tensor::matrix(ids.len(), width, data)?)
        };
        Ok(NodeFeatures {
            customer: table(catalog.customers(), &self.customers, "customer")?,
            skill: table(catalog.skills(), &self.skills, "skill")?,
        })
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::format(path, e.line(), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| LabError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| LabError::io(path, e))?;
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Parses a TOML file; syntax and schema problems are configuration errors.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| LabError::io(path, e))?;
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Rows to CSV at `path`.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| LabError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}
