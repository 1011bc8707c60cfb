//! Persisted embedding collections: the interchange format between training,
//! evaluation, and projection.
//!
//! A store holds `(id, role, level) → point` records plus the curvature they
//! live at. Two on-disk twins share one logical layout:
//!
//! * `EMB v1` — line-oriented text: header `EMB v1 <count> <dim> <kappa>`,
//!   then one record per line: `id role level` followed by `dim + 1` decimal
//!   floats, time coordinate first.
//! * `LEMB` — binary: magic `LEMB`, little-endian `u32` version, `u32`
//!   count, `u32` dim, `f64` kappa, then per record a length-prefixed UTF-8
//!   id, a role byte, an `i32` level, and `dim + 1` little-endian `f32`
//!   coordinates, time first.
//!
//! Coordinates are quantized to single precision in both formats (text
//! prints the shortest decimal that round-trips as `f32`), so text and
//! binary stores of the same data decode identically. On load the time
//! coordinate is re-derived from the spatial part — that is what guarantees
//! reloaded points satisfy the manifold constraint exactly despite `f32`
//! rounding — and the stored time is cross-checked against it to catch
//! corruption.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{lift, Curvature, LorentzPoint};
use crate::hierarchy::Modality;

/// What an embedding stands for. `Image`/`Caption` name external modalities;
/// `NodeA`/`NodeB` are the two synthetic views of a concept node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Image,
    Caption,
    NodeA,
    NodeB,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Image => "image",
            Role::Caption => "caption",
            Role::NodeA => "node_a",
            Role::NodeB => "node_b",
        }
    }

    pub fn parse(text: &str) -> Option<Role> {
        match text {
            "image" => Some(Role::Image),
            "caption" => Some(Role::Caption),
            "node_a" => Some(Role::NodeA),
            "node_b" => Some(Role::NodeB),
            _ => None,
        }
    }

    fn code(self) -> u8 {
        match self {
            Role::Image => 0,
            Role::Caption => 1,
            Role::NodeA => 2,
            Role::NodeB => 3,
        }
    }

    fn from_code(code: u8) -> Option<Role> {
        match code {
            0 => Some(Role::Image),
            1 => Some(Role::Caption),
            2 => Some(Role::NodeA),
            3 => Some(Role::NodeB),
            _ => None,
        }
    }

    /// Roles whose embeddings act as text-like retrieval candidates.
    pub fn is_text_like(self) -> bool {
        matches!(self, Role::Caption | Role::NodeB)
    }
}

/// One stored embedding with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub role: Role,
    pub level: i32,
    pub point: LorentzPoint,
}

/// An id-indexed collection of embeddings at one shared curvature.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
    kappa: Curvature,
}

impl EmbeddingStore {
    pub fn new(kappa: Curvature) -> Self {
        EmbeddingStore {
            records: Vec::new(),
            index: HashMap::new(),
            kappa,
        }
    }

    pub fn kappa(&self) -> Curvature {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.point.dim())
    }

    /// Appends a record, enforcing id uniqueness and shape/curvature
    /// consistency. Ids must be non-empty and whitespace-free (the text
    /// format is space-separated).
    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.id.is_empty() || record.id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidParameter(format!(
                "embedding id must be non-empty without whitespace, got `{}`",
                record.id
            )));
        }
        if self.index.contains_key(&record.id) {
            return Err(Error::InvalidParameter(format!(
                "duplicate embedding id `{}`",
                record.id
            )));
        }
        if record.point.kappa() != self.kappa {
            return Err(Error::CurvatureMismatch {
                left: self.kappa.get(),
                right: record.point.kappa().get(),
            });
        }
        if let Some(dim) = self.dim() {
            if record.point.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: record.point.dim(),
                });
            }
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// Writes the `EMB v1` text twin.
    pub fn save_text(&self, path: &Path) -> Result<()> {
        let dim = self.dim().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "EMB v1 {} {dim} {}", self.len(), self.kappa.get());
        for r in &self.records {
            let _ = write!(out, "{} {} {}", r.id, r.role.as_str(), r.level);
            let _ = write!(out, " {}", r.point.time() as f32);
            for &v in r.point.spatial() {
                let _ = write!(out, " {}", v as f32);
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Writes the `LEMB` binary twin.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let dim = self.dim().unwrap_or(0);
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(b"LEMB");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&self.kappa.get().to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            out.push(r.role.code());
            out.extend_from_slice(&r.level.to_le_bytes());
            out.extend_from_slice(&(r.point.time() as f32).to_le_bytes());
            for &v in r.point.spatial() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads either twin, sniffing the leading magic bytes.
    pub fn load(path: &Path) -> Result<EmbeddingStore> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"LEMB") {
            load_binary(path, &bytes)
        } else if bytes.starts_with(b"EMB ") {
            let text = String::from_utf8(bytes).map_err(|_| {
                Error::parse(path, 1, "text store is not valid UTF-8")
            })?;
            load_text(path, &text)
        } else {
            Err(Error::parse(
                path,
                1,
                "unrecognized embedding store (expected `EMB v1` or `LEMB` header)",
            ))
        }
    }
}

/// Rebuilds a record's point from storage: widen the `f32` coordinates,
/// re-derive the time from the spatial part (exact manifold membership), and
/// verify the stored time agrees with the derived one.
fn reassemble_point(
    path: &Path,
    line: usize,
    stored_time: f64,
    spatial: Vec<f64>,
    kappa: Curvature,
) -> Result<LorentzPoint> {
    let point = lift(&spatial, kappa)?;
    let derived = point.time();
    if (stored_time - derived).abs() > 1e-4 * derived.max(1.0) {
        return Err(Error::parse(
            path,
            line,
            format!(
                "stored time {stored_time} inconsistent with spatial part (expected ≈ {derived})"
            ),
        ));
    }
    Ok(point)
}

fn load_text(path: &Path, text: &str) -> Result<EmbeddingStore> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty store file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != "EMB" {
        return Err(Error::parse(
            path,
            1,
            "header must be `EMB v1 <count> <dim> <kappa>`",
        ));
    }
    if toks[1] != "v1" {
        return Err(Error::UnsupportedVersion {
            path: path.display().to_string(),
            found: toks[1].to_string(),
            expected: "v1".to_string(),
        });
    }
    let count: usize = toks[2]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid count `{}`", toks[2])))?;
    let dim: usize = toks[3]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid dim `{}`", toks[3])))?;
    let kappa_raw: f64 = toks[4]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid kappa `{}`", toks[4])))?;
    let kappa = Curvature::new(kappa_raw)?;
    let mut store = EmbeddingStore::new(kappa);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let expected = 3 + dim + 1;
        if toks.len() != expected {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {expected} fields, found {}", toks.len()),
            ));
        }
        let id = toks[0].to_string();
        let role = Role::parse(toks[1])
            .ok_or_else(|| Error::parse(path, line_no, format!("unknown role `{}`", toks[1])))?;
        let level: i32 = toks[2]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("invalid level `{}`", toks[2])))?;
        let mut floats = Vec::with_capacity(dim + 1);
        for tok in &toks[3..] {
            let v: f32 = tok
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("invalid float `{tok}`")))?;
            floats.push(v as f64);
        }
        let spatial = floats.split_off(1);
        let point = reassemble_point(path, line_no, floats[0], spatial, kappa)?;
        store.push(EmbeddingRecord {
            id,
            role,
            level,
            point,
        })?;
    }
    if store.len() != count {
        return Err(Error::parse(
            path,
            0,
            format!(
                "header promises {count} records, file holds {} (truncated or padded)",
                store.len()
            ),
        ));
    }
    Ok(store)
}

/// Id scheme for embeddings exported from a concept tree: node 3's A view
/// becomes `n3a`. Shared vocabulary between the trainer (writer) and the
/// evaluation suite (reader).
pub fn node_embedding_id(node: usize, modality: Modality) -> String {
    match modality {
        Modality::A => format!("n{node}a"),
        Modality::B => format!("n{node}b"),
    }
}

/// Cursor over a little-endian binary layout with bounds-checked reads.
/// Shared by the store and checkpoint decoders.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], pos: usize) -> Self {
        ByteReader { bytes, pos }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, path: &Path, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                path,
                0,
                format!("binary file truncated while reading {what}"),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn u32(&mut self, path: &Path, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, path, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self, path: &Path, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, path, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn u128(&mut self, path: &Path, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(
            self.take(16, path, what)?.try_into().expect("16 bytes"),
        ))
    }

    pub(crate) fn i32(&mut self, path: &Path, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(
            self.take(4, path, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn f32(&mut self, path: &Path, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4, path, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn f64(&mut self, path: &Path, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, path, what)?.try_into().expect("8 bytes"),
        ))
    }
}

fn load_binary(path: &Path, bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut r = ByteReader::new(bytes, 4); // past the magic
    let version = r.u32(path, "version")?;
    if version != 1 {
        return Err(Error::UnsupportedVersion {
            path: path.display().to_string(),
            found: format!("v{version}"),
            expected: "v1".to_string(),
        });
    }
    let count = r.u32(path, "record count")? as usize;
    let dim = r.u32(path, "dim")? as usize;
    let kappa = Curvature::new(r.f64(path, "kappa")?)?;
    let mut store = EmbeddingStore::new(kappa);
    for rec in 0..count {
        let id_len = r.u32(path, "id length")? as usize;
        let id_bytes = r.take(id_len, path, "id")?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| Error::parse(path, 0, format!("record {rec}: id is not UTF-8")))?
            .to_string();
        let role_code = r.take(1, path, "role")?[0];
        let role = Role::from_code(role_code).ok_or_else(|| {
            Error::parse(path, 0, format!("record {rec}: unknown role code {role_code}"))
        })?;
        let level = r.i32(path, "level")?;
        let time = r.f32(path, "time coordinate")? as f64;
        let mut spatial = Vec::with_capacity(dim);
        for _ in 0..dim {
            spatial.push(r.f32(path, "spatial coordinate")? as f64);
        }
        let point = reassemble_point(path, 0, time, spatial, kappa)?;
        store.push(EmbeddingRecord {
            id,
            role,
            level,
            point,
        })?;
    }
    if r.remaining() != 0 {
        return Err(Error::parse(
            path,
            0,
            format!(
                "binary store holds {} trailing bytes after the last record",
                r.remaining()
            ),
        ));
    }
    Ok(store)
}
