//! Finest-table construction, persistence, aggregation and cell queries.

mod aggregate;
mod finest;
mod ingest;
mod loss;
mod store;

use std::cmp::Ordering;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::MaskError;

pub use aggregate::{aggregate_table, query_cell, AggRow, AggregatedTable, AggregationRequest, CellAnswer, CellQuery};
pub use finest::{build_finest_table, FinestTable, RowRef};
pub use ingest::{ingest_csv, ingest_csv_path, IngestOptions, Microdata};
pub use loss::{InfoLossSummary, LossBin};
pub use store::{load_finest_table, save_finest_table, write_atomic, META_FILE, ROWS_FILE, SCHEMA_VERSION};

pub const DEFAULT_KEY_THR: usize = 100;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("column `{0}` not found in input")]
    MissingColumn(String),
    #[error("column `{0}` appears more than once")]
    DuplicateColumn(String),
    #[error("input has no records")]
    EmptyInput,
    #[error("at least one hierarchical variable is required")]
    NoHierarchy,
    #[error("invalid hierarchy ranks: {0}")]
    InvalidRanks(String),
    #[error("`{0}` is declared both as a hierarchical and as a key variable")]
    KeyIsHierarchy(String),
    #[error("hierarchy not nested: {level} unit `{unit}` lies in both `{first}` and `{second}` of {parent_level}")]
    NestingViolation {
        level: String,
        unit: String,
        parent_level: String,
        first: String,
        second: String,
    },
    #[error("unknown key variable `{0}`")]
    UnknownKey(String),
    #[error("key variable `{0}` requested twice")]
    RepeatedKey(String),
    #[error("hierarchy level {level} out of range 1..={depth}")]
    InvalidLevel { level: usize, depth: usize },
    #[error("unknown unit `{value}` at hierarchy level `{level}`")]
    UnknownUnit { level: String, value: String },
    #[error("unknown category `{value}` for key `{key}`")]
    UnknownKeyValue { key: String, value: String },
    #[error("too many category combinations to index")]
    TooManyCombinations,
    #[error("row has {found} fields, expected {expected}")]
    RowWidth { expected: usize, found: usize },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed table container: {0}")]
    Malformed(String),
    #[error("table schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("row file checksum mismatch: metadata says {expected}, file hashes to {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("table integrity check failed: {0}")]
    Integrity(String),
}

impl TableError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TableError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            TableError::Io { .. } => true,
            TableError::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = TableError> = std::result::Result<T, E>;

/// Hierarchical variables with their ranks. Rank 1 is the coarsest level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HierarchyRepr", into = "HierarchyRepr")]
pub struct HierarchySpec {
    names: Vec<String>,
    ranks: Vec<u32>,
    levels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct HierarchyRepr {
    names: Vec<String>,
    ranks: Vec<u32>,
}

impl HierarchySpec {
    /// `names` in any order; without `ranks` they are taken as coarse to fine.
    pub fn new(names: Vec<String>, ranks: Option<Vec<u32>>) -> Result<Self> {
        if names.is_empty() {
            return Err(TableError::NoHierarchy);
        }
        let ranks = ranks.unwrap_or_else(|| (1..=names.len() as u32).collect());
        if ranks.len() != names.len() {
            return Err(TableError::InvalidRanks(format!(
                "{} ranks for {} variables",
                ranks.len(),
                names.len()
            )));
        }
        let mut seen = vec![false; names.len()];
        for &r in &ranks {
            let slot = (r as usize).checked_sub(1).and_then(|i| seen.get_mut(i));
            match slot {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(TableError::InvalidRanks(format!(
                        "{ranks:?} is not a permutation of 1..={}",
                        names.len()
                    )))
                }
            }
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(TableError::DuplicateColumn(n.clone()));
            }
        }
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by_key(|&i| ranks[i]);
        let levels = order.iter().map(|&i| names[i].clone()).collect();
        Ok(HierarchySpec { names, ranks, levels })
    }

    /// Variable names as supplied.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ranks(&self) -> &[u32] {
        &self.ranks
    }

    /// Variable names ordered coarse to fine; level `r` is `levels()[r - 1]`.
    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

impl TryFrom<HierarchyRepr> for HierarchySpec {
    type Error = TableError;

    fn try_from(r: HierarchyRepr) -> Result<Self> {
        HierarchySpec::new(r.names, Some(r.ranks))
    }
}

impl From<HierarchySpec> for HierarchyRepr {
    fn from(h: HierarchySpec) -> Self {
        HierarchyRepr {
            names: h.names,
            ranks: h.ranks,
        }
    }
}

/// Key variables kept in the table, plus those dropped by the category cap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySpec {
    pub names: Vec<String>,
    pub key_thr: usize,
    #[serde(default)]
    pub excluded: Vec<String>,
}

/// One categorical column with its labels in canonical order. A row stores
/// the index into `labels`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub labels: Vec<String>,
}

impl Dimension {
    pub fn code_of(&self, label: &str) -> Option<u32> {
        self.labels
            .binary_search_by(|l| label_cmp(l, label))
            .ok()
            .map(|i| i as u32)
    }

    pub fn label(&self, code: u32) -> &str {
        &self.labels[code as usize]
    }

    pub fn cardinality(&self) -> usize {
        self.labels.len()
    }
}

/// Canonical order of category labels: unsigned integers first, by value
/// (ties by text so "01" and "1" stay distinct), then everything else
/// bytewise.
pub fn label_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Mixed-radix packing of category codes, most significant column first, so
/// integer order of packed keys equals lexicographic order of code tuples.
#[derive(Debug, Clone)]
pub(crate) struct Packer {
    radices: Vec<u128>,
}

impl Packer {
    pub(crate) fn new(cardinalities: impl IntoIterator<Item = usize>) -> Result<Self> {
        let radices: Vec<u128> = cardinalities.into_iter().map(|c| c.max(1) as u128).collect();
        radices
            .iter()
            .try_fold(1u128, |acc, &r| acc.checked_mul(r))
            .ok_or(TableError::TooManyCombinations)?;
        Ok(Packer { radices })
    }

    #[inline]
    pub(crate) fn pack(&self, codes: impl IntoIterator<Item = u32>) -> u128 {
        codes
            .into_iter()
            .zip(&self.radices)
            .fold(0u128, |acc, (c, &r)| acc * r + c as u128)
    }

    pub(crate) fn unpack_into(&self, mut key: u128, out: &mut [u32]) {
        for (slot, &r) in out.iter_mut().zip(&self.radices).rev() {
            *slot = (key % r) as u32;
            key /= r;
        }
    }
}
