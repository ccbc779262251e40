use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Dimension, FinestTable, InfoLossSummary, Packer, Result, TableError};
use crate::masking::{apply_ilba, masked_aggregate, IlbaTrace, PartitionBuilder, Shift, SmallCellPartition, Threshold};

/// Hierarchy level (1 = coarsest) and key variables of a coarser table. An
/// empty key list gives per-unit totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationRequest {
    pub level: usize,
    pub keys: Vec<String>,
}

impl AggregationRequest {
    pub fn new(level: usize, keys: impl IntoIterator<Item = impl Into<String>>) -> Self {
        AggregationRequest {
            level,
            keys: keys.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggRow {
    /// Codes for hierarchy levels 1..=level then the requested keys.
    pub codes: Box<[u32]>,
    pub partition: SmallCellPartition,
    pub masked_count: u64,
    pub shift: Shift,
}

impl AggRow {
    pub fn true_count(&self) -> u64 {
        self.partition.true_total()
    }

    pub fn type1(&self) -> bool {
        self.shift == Shift::Type1Up
    }

    pub fn type2(&self) -> bool {
        self.shift == Shift::Type2Down
    }

    pub fn loss(&self) -> i64 {
        self.masked_count as i64 - self.true_count() as i64
    }
}

/// A coarser table masked with iLBA. Rows are in canonical order and only
/// groups with at least one observed finest row appear.
#[derive(Debug, Clone)]
pub struct AggregatedTable {
    pub k: Threshold,
    pub level: usize,
    pub dims: Vec<Dimension>,
    pub rows: Vec<AggRow>,
}

impl AggregatedTable {
    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }

    pub fn labels<'a>(&'a self, row: &'a AggRow) -> impl Iterator<Item = &'a str> + 'a {
        row.codes.iter().zip(&self.dims).map(|(&c, d)| d.label(c))
    }

    /// Looks up the row for a full label tuple.
    pub fn find(&self, labels: &[&str]) -> Option<&AggRow> {
        if labels.len() != self.dims.len() {
            return None;
        }
        let codes: Option<Vec<u32>> = labels.iter().zip(&self.dims).map(|(l, d)| d.code_of(l)).collect();
        let codes = codes?;
        self.rows
            .binary_search_by(|r| r.codes.as_ref().cmp(codes.as_slice()))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn info_loss(&self) -> InfoLossSummary {
        InfoLossSummary::from_losses(self.rows.iter().map(AggRow::loss))
    }

    /// The public table: labels, `N_masked`, `type1`, `type2`. True counts
    /// are never written.
    pub fn write_csv<W: Write>(&self, w: W, delimiter: u8) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
        let header: Vec<&str> = self.column_names().chain(["N_masked", "type1", "type2"]).collect();
        out.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for row in &self.rows {
            rec.clear();
            rec.extend(self.labels(row).map(str::to_owned));
            rec.push(row.masked_count.to_string());
            rec.push(u8::from(row.type1()).to_string());
            rec.push(u8::from(row.type2()).to_string());
            out.write_record(&rec)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Resolves the requested columns to indices into the finest table's dims.
fn selected_dims(table: &FinestTable, level: usize, keys: &[String]) -> Result<Vec<usize>> {
    table.check_level(level)?;
    let mut sel: Vec<usize> = (0..level).collect();
    for (i, k) in keys.iter().enumerate() {
        if keys[..i].contains(k) {
            return Err(TableError::RepeatedKey(k.clone()));
        }
        sel.push(table.key_index(k)?);
    }
    Ok(sel)
}

fn mask_group(p: SmallCellPartition, k: Threshold) -> Result<(u64, IlbaTrace)> {
    let trace = apply_ilba(&p, k)?;
    Ok((masked_aggregate(p.f_large, trace.masked_small), trace))
}

/// Groups finest rows by (hierarchy units through `level`, requested keys)
/// and releases each group's count through partition, iLBA and re-adding
/// the exact large-cell sum.
pub fn aggregate_table(table: &FinestTable, req: &AggregationRequest) -> Result<AggregatedTable> {
    let sel = selected_dims(table, req.level, &req.keys)?;
    let dims: Vec<Dimension> = sel.iter().map(|&d| table.dims[d].clone()).collect();
    let packer = Packer::new(dims.iter().map(Dimension::cardinality))?;

    let mut order: Vec<(u128, u32)> = table
        .rows()
        .enumerate()
        .map(|(i, r)| (packer.pack(sel.iter().map(|&d| r.codes[d])), i as u32))
        .collect();
    order.sort_unstable();

    let k = table.k;
    let mut rows = Vec::new();
    let mut codes = vec![0u32; sel.len()];
    for group in order.chunk_by(|a, b| a.0 == b.0) {
        let mut b = PartitionBuilder::new(k);
        for &(_, i) in group {
            let r = table.row(i as usize);
            b.push(r.true_count, r.masked_count)?;
        }
        let partition = b.finish();
        // only explicit zero rows: not an observed group
        if partition.true_total() == 0 {
            continue;
        }
        let (masked_count, trace) = mask_group(partition, k)?;
        packer.unpack_into(group[0].0, &mut codes);
        rows.push(AggRow {
            codes: codes.clone().into_boxed_slice(),
            partition,
            masked_count,
            shift: trace.shift(),
        });
    }

    Ok(AggregatedTable {
        k,
        level: req.level,
        dims,
        rows,
    })
}

/// A single aggregated cell: a unit at some hierarchy level plus fixed key
/// categories. Keys not mentioned are summed over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellQuery {
    pub level: usize,
    pub unit: String,
    pub keys: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellAnswer {
    pub masked_count: u64,
    /// Finest rows with a nonzero true count inside the cell.
    pub matched_rows: usize,
    pub partition: SmallCellPartition,
    pub trace: IlbaTrace,
}

/// Masked count for one cell, identical to the matching entry of
/// [`aggregate_table`] for the same level and keys. A cell without observed
/// rows answers 0.
pub fn query_cell(table: &FinestTable, q: &CellQuery) -> Result<CellAnswer> {
    table.check_level(q.level)?;
    let level_dim = &table.dims[q.level - 1];
    let unit = level_dim.code_of(&q.unit).ok_or_else(|| TableError::UnknownUnit {
        level: level_dim.name.clone(),
        value: q.unit.clone(),
    })?;
    let names: Vec<String> = q.keys.iter().map(|(k, _)| k.clone()).collect();
    let sel = selected_dims(table, q.level, &names)?;
    let mut want: Vec<(usize, u32)> = vec![(q.level - 1, unit)];
    for ((name, value), &d) in q.keys.iter().zip(&sel[q.level..]) {
        let code = table.dims[d]
            .code_of(value)
            .ok_or_else(|| TableError::UnknownKeyValue {
                key: name.clone(),
                value: value.clone(),
            })?;
        want.push((d, code));
    }

    let mut b = PartitionBuilder::new(table.k);
    let mut matched_rows = 0;
    for r in table.rows() {
        if want.iter().all(|&(d, c)| r.codes[d] == c) {
            b.push(r.true_count, r.masked_count)?;
            matched_rows += usize::from(r.true_count > 0);
        }
    }
    let partition = b.finish();
    let (masked_count, trace) = mask_group(partition, table.k)?;
    Ok(CellAnswer {
        masked_count,
        matched_rows,
        partition,
        trace,
    })
}
