use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::ingest::check_nesting;
use super::{label_cmp, Dimension, HierarchySpec, KeySpec, Microdata, Packer, Result, TableError};
use crate::masking::{apply_sca, is_sca_output, Threshold};

/// SCA-masked finest-level frequency table.
///
/// One row per observed combination of finest hierarchy unit and key
/// categories, sorted canonically (hierarchy coarse to fine, then keys in
/// declared order). Immutable once built; every coarser release is derived
/// from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinestTable {
    pub(crate) hierarchy: HierarchySpec,
    pub(crate) keys: KeySpec,
    pub(crate) k: Threshold,
    pub(crate) seed: u64,
    pub(crate) dims: Vec<Dimension>,
    pub(crate) codes: Vec<u32>,
    pub(crate) true_counts: Vec<u64>,
    pub(crate) masked_counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowRef<'a> {
    pub codes: &'a [u32],
    pub true_count: u64,
    pub masked_count: u64,
}

/// Counts every observed combination and masks each count with SCA.
///
/// SCA draws come from a ChaCha20 stream seeded with `seed`, consumed one per
/// small row in canonical order, so the same data and seed always give the
/// same table.
pub fn build_finest_table(data: &Microdata, k: Threshold, seed: u64) -> Result<FinestTable> {
    let width = data.dims.len();
    let packer = Packer::new(data.dims.iter().map(Dimension::cardinality))?;
    let mut packed: Vec<u128> = (0..data.n_records)
        .map(|r| packer.pack(data.columns.iter().map(|c| c[r])))
        .collect();
    packed.sort_unstable();

    let mut codes = Vec::new();
    let mut true_counts = Vec::new();
    let mut buf = vec![0u32; width];
    for run in packed.chunk_by(|a, b| a == b) {
        packer.unpack_into(run[0], &mut buf);
        codes.extend_from_slice(&buf);
        true_counts.push(run.len() as u64);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let masked_counts = true_counts.iter().map(|&f| apply_sca(f, k, &mut rng).masked).collect();

    Ok(FinestTable {
        hierarchy: data.hierarchy.clone(),
        keys: data.keys.clone(),
        k,
        seed,
        dims: data.dims.clone(),
        codes,
        true_counts,
        masked_counts,
    })
}

impl FinestTable {
    /// Builds a table from explicit labelled rows `(labels, true, masked)`,
    /// labels ordered hierarchy coarse to fine then keys. Category sets are
    /// taken from the labels present. Rows are sorted; duplicates, bad masks
    /// and broken nesting are rejected.
    pub fn from_labeled_rows<I>(
        hierarchy: HierarchySpec,
        keys: KeySpec,
        k: Threshold,
        seed: u64,
        rows: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<String>, u64, u64)>,
    {
        let names: Vec<String> = hierarchy.levels().iter().chain(&keys.names).cloned().collect();
        let width = names.len();
        let rows: Vec<_> = rows.into_iter().collect();
        for (labels, _, _) in &rows {
            if labels.len() != width {
                return Err(TableError::RowWidth {
                    expected: width,
                    found: labels.len(),
                });
            }
        }
        let dims: Vec<Dimension> = names
            .into_iter()
            .enumerate()
            .map(|(d, name)| {
                let mut labels: Vec<String> = rows.iter().map(|(l, _, _)| l[d].clone()).collect();
                labels.sort_by(|a, b| label_cmp(a, b));
                labels.dedup();
                Dimension { name, labels }
            })
            .collect();
        let mut coded: Vec<(Vec<u32>, u64, u64)> = rows
            .into_iter()
            .map(|(labels, t, m)| {
                let codes = labels.iter().zip(&dims).map(|(l, d)| d.code_of(l).unwrap()).collect();
                (codes, t, m)
            })
            .collect();
        coded.sort_by(|a, b| a.0.cmp(&b.0));
        let table = FinestTable {
            hierarchy,
            keys,
            k,
            seed,
            dims,
            codes: coded.iter().flat_map(|r| r.0.iter().copied()).collect(),
            true_counts: coded.iter().map(|r| r.1).collect(),
            masked_counts: coded.iter().map(|r| r.2).collect(),
        };
        table.validate()?;
        Ok(table)
    }

    /// Copy of this table with explicit zero-count rows added for the given
    /// label combinations. Aggregates are unaffected by such rows.
    pub fn with_zero_rows(&self, combos: &[Vec<String>]) -> Result<Self> {
        let mut rows: Vec<(Vec<String>, u64, u64)> = self
            .rows()
            .map(|r| {
                (
                    self.labels(r.codes).map(str::to_owned).collect(),
                    r.true_count,
                    r.masked_count,
                )
            })
            .collect();
        rows.extend(combos.iter().map(|c| (c.clone(), 0, 0)));
        let mut t = Self::from_labeled_rows(self.hierarchy.clone(), self.keys.clone(), self.k, self.seed, rows)?;
        // keep category sets even if some label only occurred in a zero row
        t.keys = self.keys.clone();
        Ok(t)
    }

    /// Checks every structural invariant: code ranges, strictly increasing
    /// canonical order, SCA-consistent masks and hierarchy nesting.
    pub fn validate(&self) -> Result<()> {
        let width = self.width();
        if self.dims.len() != self.hierarchy.depth() + self.keys.names.len() {
            return Err(TableError::Integrity("dimension count does not match schema".into()));
        }
        if self.codes.len() != width * self.true_counts.len() || self.true_counts.len() != self.masked_counts.len() {
            return Err(TableError::Integrity("ragged row storage".into()));
        }
        let mut prev: Option<&[u32]> = None;
        for (i, row) in self.rows().enumerate() {
            for (&c, d) in row.codes.iter().zip(&self.dims) {
                if c as usize >= d.cardinality() {
                    return Err(TableError::Integrity(format!(
                        "row {i}: code out of range for `{}`",
                        d.name
                    )));
                }
            }
            if let Some(p) = prev {
                if p >= row.codes {
                    return Err(TableError::Integrity(format!(
                        "row {i} duplicates or precedes the previous row in canonical order"
                    )));
                }
            }
            prev = Some(row.codes);
            if !is_sca_output(row.true_count, row.masked_count, self.k) {
                return Err(TableError::Integrity(format!(
                    "row {i}: masked count {} is not an SCA output of {} with K={}",
                    row.masked_count, row.true_count, self.k
                )));
            }
        }
        let depth = self.hierarchy.depth();
        let columns: Vec<Vec<u32>> = (0..depth)
            .map(|d| self.codes.iter().skip(d).step_by(width).copied().collect())
            .collect();
        check_nesting(&self.dims[..depth], &columns)
    }

    pub fn hierarchy(&self) -> &HierarchySpec {
        &self.hierarchy
    }

    pub fn keys(&self) -> &KeySpec {
        &self.keys
    }

    pub fn k(&self) -> Threshold {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Hierarchy levels coarse to fine, then keys.
    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.len()
    }

    pub fn depth(&self) -> usize {
        self.hierarchy.depth()
    }

    pub fn n_rows(&self) -> usize {
        self.true_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_counts.is_empty()
    }

    pub fn total_records(&self) -> u64 {
        self.true_counts.iter().sum()
    }

    pub fn row(&self, i: usize) -> RowRef<'_> {
        let w = self.width();
        RowRef {
            codes: &self.codes[i * w..(i + 1) * w],
            true_count: self.true_counts[i],
            masked_count: self.masked_counts[i],
        }
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = RowRef<'_>> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn labels<'a>(&'a self, codes: &'a [u32]) -> impl Iterator<Item = &'a str> + 'a {
        codes.iter().zip(&self.dims).map(|(&c, d)| d.label(c))
    }

    /// Index into [`dims`](Self::dims) of a key variable.
    pub fn key_index(&self, name: &str) -> Result<usize> {
        self.keys
            .names
            .iter()
            .position(|k| k == name)
            .map(|i| self.depth() + i)
            .ok_or_else(|| TableError::UnknownKey(name.to_owned()))
    }

    pub(crate) fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.depth() {
            return Err(TableError::InvalidLevel {
                level,
                depth: self.depth(),
            });
        }
        Ok(())
    }
}
