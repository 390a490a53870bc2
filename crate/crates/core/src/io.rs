//! File formats: EMB1 embeddings, JSON-lines corpora and sidecars, and the
//! flat key-value config.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::world::{Corpus, Record};

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const EMB_VERSION: u16 = 1;

/// n×d f32 embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl EmbeddingFile {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::Shape(format!("{} values for {n}x{d}", data.len())));
        }
        Ok(Self { n, d, data })
    }

    /// Rounds to f32.
    pub fn from_matrix(m: &Matrix) -> Self {
        Self { n: m.rows(), d: m.cols(), data: m.data().iter().map(|&v| v as f32).collect() }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        Matrix::new(self.n, self.d, self.data.iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = u32::try_from(self.n).map_err(|_| Error::Shape("too many rows for EMB1".into()))?;
        let d = u32::try_from(self.d).map_err(|_| Error::Shape("too many columns for EMB1".into()))?;
        w.write_all(EMB_MAGIC)?;
        w.write_all(&EMB_VERSION.to_le_bytes())?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r);
        r.magic(EMB_MAGIC)?;
        r.version(EMB_VERSION)?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let len = n.checked_mul(d).ok_or_else(|| Error::Format("dimension overflow".into()))?;
        let data = r.f32s(len)?;
        r.finish()?;
        Ok(Self { n, d, data })
    }
}

/// One sidecar line aligned with an EMB1 row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub id: String,
    pub z: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<String>,
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(w: W, corpus: &Corpus) -> Result<()> {
    write_jsonl(w, &corpus.records)
}

/// Reads a corpus, rejecting duplicate ids and labels other than 0/1.
pub fn read_corpus<R: BufRead>(r: R) -> Result<Corpus> {
    let records: Vec<Record> = read_jsonl(r)?;
    let mut seen = std::collections::HashSet::new();
    for rec in &records {
        if rec.z > 1 {
            return Err(Error::Format(format!("record {} has z = {}", rec.id, rec.z)));
        }
        if !seen.insert(rec.id.as_str()) {
            return Err(Error::Format(format!("duplicate id {}", rec.id)));
        }
    }
    Ok(Corpus::new(records))
}

/// Flat `key = value` settings. `#` starts a comment line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }
}

/// Applies the world keys of a config on top of `base`.
///
/// Keys: `seed`, `table_seed`, `max_len`, `token_dim`, `min_token_distance`,
/// `adj_own_rate`, `adj_other_rate`, `skew` (every profession) and
/// `skew.<profession>`.
pub fn world_from_config(kv: &KvConfig, mut base: crate::world::WorldConfig) -> Result<crate::world::WorldConfig> {
    if let Some(v) = kv.get("seed")? {
        base.seed = v;
    }
    if let Some(v) = kv.get("table_seed")? {
        base.table_seed = v;
    }
    if let Some(v) = kv.get("max_len")? {
        base.max_len = v;
    }
    if let Some(v) = kv.get("token_dim")? {
        base.token_dim = v;
    }
    if let Some(v) = kv.get("min_token_distance")? {
        base.min_token_distance = v;
    }
    if let Some(v) = kv.get("adj_own_rate")? {
        base.adj_own_rate = v;
    }
    if let Some(v) = kv.get("adj_other_rate")? {
        base.adj_other_rate = v;
    }
    if let Some(v) = kv.get::<f64>("skew")? {
        base = base.with_uniform_skew(v);
    }
    for key in kv.keys() {
        if let Some(name) = key.strip_prefix("skew.") {
            let v: f64 = kv.get(key)?.expect("key present");
            let p = base
                .professions
                .iter_mut()
                .find(|p| p.name == name)
                .ok_or_else(|| Error::Config(format!("unknown profession {name}")))?;
            p.female_share = v;
        }
    }
    base.validate()?;
    Ok(base)
}
