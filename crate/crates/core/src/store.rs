//! Embedding tables and the EMB1 interchange format.
//!
//! EMB1 layout (little-endian throughout):
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0 | 4 | magic `EMB1` |
//! | 4 | 4 | `u32` row count |
//! | 8 | 4 | `u32` column count |
//! | 12 | 1 | label flag (0/1) |
//! | 13 | 1 | group flag (0/1) |
//! | 14 | 6 | reserved, zero |
//! | 20 | 4·n·d | `f32` features, row-major |
//! | .. | 4·n | `i32` labels, if flagged |
//! | .. | 4·n | `i32` group ids, if flagged |
//! | .. | 4 | `u32` metadata length `L` |
//! | .. | L | UTF-8 `key=value` lines |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 20;

/// Label value an extractor writes for a row it could not label.
pub const UNLABELED: i32 = -1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation failed: {}", join_violations(.0))]
    Validation(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One broken table invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    EmptyTable,
    FeatureShape,
    NonFiniteFeature { row: usize, col: usize },
    LabelsLengthMismatch,
    GroupsLengthMismatch,
    UnlabeledRow { row: usize },
    NegativeLabel { row: usize },
    LabelsNotContiguous,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTable => write!(f, "empty table"),
            Violation::FeatureShape => write!(f, "feature buffer does not match n x d"),
            Violation::NonFiniteFeature { row, col } => {
                write!(f, "non-finite feature at ({row}, {col})")
            }
            Violation::LabelsLengthMismatch => write!(f, "labels length mismatch"),
            Violation::GroupsLengthMismatch => write!(f, "groups length mismatch"),
            Violation::UnlabeledRow { row } => write!(f, "unlabeled row {row}"),
            Violation::NegativeLabel { row } => write!(f, "negative label at row {row}"),
            Violation::LabelsNotContiguous => write!(f, "labels not contiguous"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub backbone: String,
    pub params: u64,
    pub dataset: String,
    /// Additional keys (e.g. pooling choice), written after the standard three.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl TableMeta {
    pub fn new(backbone: impl Into<String>, params: u64, dataset: impl Into<String>) -> Self {
        TableMeta {
            backbone: backbone.into(),
            params,
            dataset: dataset.into(),
            extra: BTreeMap::new(),
        }
    }

    fn encode(&self) -> String {
        let mut s = format!(
            "backbone={}\nparams={}\ndataset={}\n",
            self.backbone, self.params, self.dataset
        );
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    fn decode(text: &str) -> Result<Self, StoreError> {
        let mut meta = TableMeta::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| StoreError::Format(format!("metadata line without '=': {line:?}")))?;
            match k {
                "backbone" => meta.backbone = v.to_string(),
                "dataset" => meta.dataset = v.to_string(),
                "params" => {
                    meta.params = v
                        .parse()
                        .map_err(|_| StoreError::Format(format!("bad params value {v:?}")))?
                }
                _ => {
                    meta.extra.insert(k.to_string(), v.to_string());
                }
            }
        }
        Ok(meta)
    }
}

/// Dense feature matrix with optional per-row labels and group ids.
///
/// Features are kept as `f32` so that a table read from disk is bit-identical
/// to the one that was written. Numerical code works on [`Self::features_f64`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    n_rows: usize,
    n_cols: usize,
    features: Vec<f32>,
    pub labels: Option<Vec<i32>>,
    pub groups: Option<Vec<i32>>,
    pub meta: TableMeta,
}

impl EmbeddingTable {
    /// Builds a table without validating it. Use [`validate`] or
    /// [`EmbeddingTable::new`] when the invariants matter.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        features: Vec<f32>,
        labels: Option<Vec<i32>>,
        groups: Option<Vec<i32>>,
        meta: TableMeta,
    ) -> Self {
        EmbeddingTable {
            n_rows,
            n_cols,
            features,
            labels,
            groups,
            meta,
        }
    }

    /// Builds and validates a table.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        features: Vec<f32>,
        labels: Option<Vec<i32>>,
        groups: Option<Vec<i32>>,
        meta: TableMeta,
    ) -> Result<Self, StoreError> {
        let t = Self::from_parts(n_rows, n_cols, features, labels, groups, meta);
        let v = validate(&t);
        if v.is_empty() {
            Ok(t)
        } else {
            Err(StoreError::Validation(v))
        }
    }

    /// Builds a table from `f64` rows, rounding to `f32`.
    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Option<Vec<i32>>,
        groups: Option<Vec<i32>>,
        meta: TableMeta,
    ) -> Result<Self, StoreError> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(StoreError::Validation(vec![Violation::FeatureShape]));
        }
        let features = rows.iter().flatten().map(|&x| x as f32).collect();
        Self::new(n, d, features, labels, groups, meta)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn features_f64(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.n_rows,
            self.n_cols,
            self.features.iter().map(|&x| x as f64),
        )
    }

    /// Number of classes, `max(label) + 1`, or 0 when unlabeled.
    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().copied().max())
            .map_or(0, |m| (m.max(-1) + 1) as usize)
    }

    /// Labels as class indices. Only meaningful for a validated table.
    pub fn class_indices(&self) -> Option<Vec<usize>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|&y| y.max(0) as usize).collect())
    }

    /// Copy of the selected rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> EmbeddingTable {
        let mut features = Vec::with_capacity(rows.len() * self.n_cols);
        for &i in rows {
            features.extend_from_slice(self.row(i));
        }
        EmbeddingTable {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            features,
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
            groups: self
                .groups
                .as_ref()
                .map(|g| rows.iter().map(|&i| g[i]).collect()),
            meta: self.meta.clone(),
        }
    }
}

/// Lists every violated table invariant; empty means the table is valid.
pub fn validate(table: &EmbeddingTable) -> Vec<Violation> {
    let mut out = Vec::new();
    let (n, d) = (table.n_rows, table.n_cols);
    if n == 0 || d == 0 {
        out.push(Violation::EmptyTable);
    }
    if table.features.len() != n * d {
        out.push(Violation::FeatureShape);
    } else if let Some(pos) = table.features.iter().position(|x| !x.is_finite()) {
        out.push(Violation::NonFiniteFeature {
            row: pos / d.max(1),
            col: pos % d.max(1),
        });
    }
    if let Some(labels) = &table.labels {
        if labels.len() != n {
            out.push(Violation::LabelsLengthMismatch);
        }
        if let Some(row) = labels.iter().position(|&y| y == UNLABELED) {
            out.push(Violation::UnlabeledRow { row });
        } else if let Some(row) = labels.iter().position(|&y| y < 0) {
            out.push(Violation::NegativeLabel { row });
        } else if !labels.is_empty() {
            let present: BTreeSet<i32> = labels.iter().copied().collect();
            let max = *present.iter().next_back().unwrap();
            if present.len() as i64 != max as i64 + 1 {
                out.push(Violation::LabelsNotContiguous);
            }
        }
    }
    if let Some(groups) = &table.groups {
        if groups.len() != n {
            out.push(Violation::GroupsLengthMismatch);
        }
    }
    out
}

/// Serializes a table to EMB1 bytes. The table must be valid.
pub fn encode_table(table: &EmbeddingTable) -> Result<Vec<u8>, StoreError> {
    let v = validate(table);
    if !v.is_empty() {
        return Err(StoreError::Validation(v));
    }
    let n = u32::try_from(table.n_rows)
        .map_err(|_| StoreError::Format("row count exceeds u32".into()))?;
    let d = u32::try_from(table.n_cols)
        .map_err(|_| StoreError::Format("column count exceeds u32".into()))?;
    let meta = table.meta.encode();
    let mut buf = Vec::with_capacity(
        HEADER_LEN + 4 * table.features.len() + 8 * table.n_rows + 4 + meta.len(),
    );
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    buf.push(table.labels.is_some() as u8);
    buf.push(table.groups.is_some() as u8);
    buf.extend_from_slice(&[0u8; 6]);
    for x in &table.features {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for col in [&table.labels, &table.groups].into_iter().flatten() {
        for y in col {
            buf.extend_from_slice(&y.to_le_bytes());
        }
    }
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                StoreError::Format(format!(
                    "truncated {what}: need {len} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i32_vec(&mut self, n: usize, what: &str) -> Result<Vec<i32>, StoreError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| overflow(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn overflow(what: &str) -> StoreError {
    StoreError::Format(format!("{what} size overflows"))
}

/// Parses EMB1 bytes and validates the result.
pub fn decode_table(buf: &[u8]) -> Result<EmbeddingTable, StoreError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(StoreError::Format("bad magic bytes".into()));
    }
    let n = c.u32("row count")? as usize;
    let d = c.u32("column count")? as usize;
    let flags = c.take(2, "flags")?;
    let (has_labels, has_groups) = match (flags[0], flags[1]) {
        (l @ 0..=1, g @ 0..=1) => (l == 1, g == 1),
        _ => return Err(StoreError::Format("flag bytes must be 0 or 1".into())),
    };
    if c.take(6, "reserved")?.iter().any(|&b| b != 0) {
        return Err(StoreError::Format("reserved header bytes are not zero".into()));
    }
    let count = n.checked_mul(d).ok_or_else(|| overflow("feature payload"))?;
    let payload = c.take(
        count.checked_mul(4).ok_or_else(|| overflow("feature payload"))?,
        "feature payload",
    )?;
    let features = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = has_labels.then(|| c.i32_vec(n, "labels")).transpose()?;
    let groups = has_groups.then(|| c.i32_vec(n, "groups")).transpose()?;
    let meta_len = c.u32("metadata length")? as usize;
    let meta_bytes = c.take(meta_len, "metadata")?;
    if c.pos != buf.len() {
        return Err(StoreError::Format(format!(
            "{} trailing bytes after metadata",
            buf.len() - c.pos
        )));
    }
    let text = std::str::from_utf8(meta_bytes)
        .map_err(|_| StoreError::Format("metadata is not UTF-8".into()))?;
    let meta = TableMeta::decode(text)?;
    EmbeddingTable::new(n, d, features, labels, groups, meta)
}

/// Reads a table. Files ending in `.csv` go through the CSV reader, anything
/// else is parsed as EMB1.
pub fn read_table(path: impl AsRef<Path>) -> Result<EmbeddingTable, StoreError> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        return read_csv(path);
    }
    let buf = fs::read(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_table(&buf)
}

/// Writes a table as EMB1. Nothing is written if the table is invalid.
pub fn write_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let bytes = encode_table(table)?;
    fs::write(path, bytes).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a hand-written CSV fixture with header `f0,..,f{d-1}[,label][,group]`.
///
/// The dataset name defaults to the file stem.
pub fn read_csv(path: impl AsRef<Path>) -> Result<EmbeddingTable, StoreError> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => StoreError::Io {
            path: path.display().to_string(),
            source,
        },
        other => StoreError::Format(format!("csv: {other:?}")),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(io_err)?;
    let header = rdr.headers().map_err(io_err)?.clone();
    let mut feature_cols = Vec::new();
    let (mut label_col, mut group_col) = (None, None);
    for (i, name) in header.iter().enumerate() {
        match name {
            "label" => label_col = Some(i),
            "group" => group_col = Some(i),
            f if f.strip_prefix('f').and_then(|s| s.parse::<usize>().ok())
                == Some(feature_cols.len()) =>
            {
                feature_cols.push(i)
            }
            other => return Err(StoreError::Format(format!("unexpected csv column {other:?}"))),
        }
    }
    let d = feature_cols.len();
    let mut features = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    let mut groups = group_col.map(|_| Vec::new());
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(io_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        for &i in &feature_cols {
            let v: f32 = field(i)
                .parse()
                .map_err(|_| StoreError::Format(format!("row {n}: bad feature {:?}", field(i))))?;
            features.push(v);
        }
        for (col, out) in [(label_col, &mut labels), (group_col, &mut groups)] {
            if let (Some(i), Some(out)) = (col, out.as_mut()) {
                let v: i32 = field(i)
                    .parse()
                    .map_err(|_| StoreError::Format(format!("row {n}: bad integer {:?}", field(i))))?;
                out.push(v);
            }
        }
        n += 1;
    }
    let dataset = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingTable::new(n, d, features, labels, groups, TableMeta::new("", 0, dataset))
}
