//! On-disk container for a [`FinestTable`].
//!
//! A directory holding two files:
//!
//! * `meta.json`: schema version, hierarchy with ranks, key spec, category
//!   sets, K, seed, row count and the SHA-256 of the row file.
//! * `rows.csv`: header `<levels>,<keys>,N,N_masked`, rows in canonical order.
//!
//! Loading re-checks the checksum and every table invariant, so a hand-edited
//! mask is caught even when the checksum has been recomputed.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dimension, FinestTable, HierarchySpec, KeySpec, Result, TableError};
use crate::masking::Threshold;

pub const SCHEMA_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const ROWS_FILE: &str = "rows.csv";
const FORMAT: &str = "freqmask-finest-table";

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    schema_version: u32,
    hierarchy: HierarchySpec,
    keys: KeySpec,
    k: Threshold,
    seed: u64,
    categories: Vec<Dimension>,
    row_count: usize,
    rows_sha256: String,
}

/// Writes `bytes` next to `path` and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| TableError::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| TableError::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| TableError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| TableError::io(path, e))
}

fn rows_csv(table: &FinestTable) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::with_capacity(table.n_rows() * 48));
    let header: Vec<&str> = table
        .dims
        .iter()
        .map(|d| d.name.as_str())
        .chain(["N", "N_masked"])
        .collect();
    out.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for r in table.rows() {
        rec.clear();
        rec.extend(table.labels(r.codes).map(str::to_owned));
        rec.push(r.true_count.to_string());
        rec.push(r.masked_count.to_string());
        out.write_record(&rec)?;
    }
    out.into_inner().map_err(|e| TableError::Malformed(e.to_string()))
}

pub fn save_finest_table(table: &FinestTable, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| TableError::io(dir, e))?;
    let rows = rows_csv(table)?;
    let meta = Meta {
        format: FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        hierarchy: table.hierarchy.clone(),
        keys: table.keys.clone(),
        k: table.k,
        seed: table.seed,
        categories: table.dims.clone(),
        row_count: table.n_rows(),
        rows_sha256: hex::encode(Sha256::digest(&rows)),
    };
    let mut meta_bytes = serde_json::to_vec_pretty(&meta)?;
    meta_bytes.push(b'\n');
    write_atomic(&dir.join(ROWS_FILE), &rows)?;
    write_atomic(&dir.join(META_FILE), &meta_bytes)
}

pub fn load_finest_table(dir: impl AsRef<Path>) -> Result<FinestTable> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta_bytes = fs::read(&meta_path).map_err(|e| TableError::io(&meta_path, e))?;

    // Version first, so files from another schema fail loudly instead of
    // half-parsing.
    let raw: serde_json::Value = serde_json::from_slice(&meta_bytes)?;
    if raw.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(TableError::Malformed(format!(
            "{} is not a finest-table container",
            meta_path.display()
        )));
    }
    let found = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| TableError::Malformed("schema_version missing".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(TableError::VersionMismatch {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    let meta: Meta = serde_json::from_value(raw)?;

    let rows_path = dir.join(ROWS_FILE);
    let rows = fs::read(&rows_path).map_err(|e| TableError::io(&rows_path, e))?;
    let digest = hex::encode(Sha256::digest(&rows));
    if digest != meta.rows_sha256 {
        return Err(TableError::ChecksumMismatch {
            expected: meta.rows_sha256,
            found: digest,
        });
    }

    let expected_names: Vec<&String> = meta.hierarchy.levels().iter().chain(&meta.keys.names).collect();
    let dim_names: Vec<&String> = meta.categories.iter().map(|d| &d.name).collect();
    if expected_names != dim_names {
        return Err(TableError::Malformed(
            "category sets do not match hierarchy and keys".into(),
        ));
    }
    for d in &meta.categories {
        if d.labels.windows(2).any(|w| super::label_cmp(&w[0], &w[1]).is_ge()) {
            return Err(TableError::Malformed(format!(
                "labels of `{}` not in canonical order",
                d.name
            )));
        }
    }

    let width = meta.categories.len();
    let mut rdr = csv::Reader::from_reader(rows.as_slice());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let want: Vec<&str> = dim_names.iter().map(|s| s.as_str()).chain(["N", "N_masked"]).collect();
    if header != want {
        return Err(TableError::Malformed(format!(
            "row header {header:?}, expected {want:?}"
        )));
    }

    let lookup: Vec<HashMap<&str, u32>> = meta
        .categories
        .iter()
        .map(|d| {
            d.labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i as u32))
                .collect()
        })
        .collect();
    let mut codes = Vec::with_capacity(meta.row_count * width);
    let mut true_counts = Vec::with_capacity(meta.row_count);
    let mut masked_counts = Vec::with_capacity(meta.row_count);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (d, dim) in meta.categories.iter().enumerate() {
            let label = &rec[d];
            let code = lookup[d]
                .get(label)
                .copied()
                .ok_or_else(|| TableError::Malformed(format!("row {i}: `{label}` not a category of `{}`", dim.name)))?;
            codes.push(code);
        }
        let num = |j: usize| {
            rec[j]
                .parse::<u64>()
                .map_err(|_| TableError::Malformed(format!("row {i}: bad count `{}`", &rec[j])))
        };
        true_counts.push(num(width)?);
        masked_counts.push(num(width + 1)?);
    }
    if true_counts.len() != meta.row_count {
        return Err(TableError::Malformed(format!(
            "metadata lists {} rows, file has {}",
            meta.row_count,
            true_counts.len()
        )));
    }

    let table = FinestTable {
        hierarchy: meta.hierarchy,
        keys: meta.keys,
        k: meta.k,
        seed: meta.seed,
        dims: meta.categories,
        codes,
        true_counts,
        masked_counts,
    };
    table.validate()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{build_finest_table, ingest_csv, IngestOptions};

    fn sample() -> FinestTable {
        let mut data = String::from("R,A,g,h\n");
        for i in 0..500u32 {
            let a = i % 13;
            data.push_str(&format!("r{},a{a},{},{}\n", a % 3, i % 5, (i * 7) % 4));
        }
        let h = HierarchySpec::new(vec!["R".into(), "A".into()], None).unwrap();
        let md = ingest_csv(data.as_bytes(), &IngestOptions::new(h)).unwrap();
        build_finest_table(&md, Threshold::new(5).unwrap(), 77).unwrap()
    }

    #[test]
    fn round_trip_is_lossless_and_byte_stable() {
        let t = sample();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_finest_table(&t, d1.path()).unwrap();
        let back = load_finest_table(d1.path()).unwrap();
        assert_eq!(back, t);
        save_finest_table(&back, d2.path()).unwrap();
        for f in [META_FILE, ROWS_FILE] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap()
            );
        }
    }

    /// Flips the mask of the first small row marked K to 3 (not an SCA output).
    fn tamper(dir: &Path) {
        let p = dir.join(ROWS_FILE);
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let i = lines
            .iter()
            .position(|l| l.ends_with(",5") && !l.ends_with(",5,5"))
            .unwrap();
        let cut = lines[i].rfind(',').unwrap();
        lines[i] = format!("{},3", &lines[i][..cut]);
        fs::write(&p, lines.join("\n") + "\n").unwrap();
    }

    #[test]
    fn tampered_rows_fail_checksum() {
        let t = sample();
        let d = tempfile::tempdir().unwrap();
        save_finest_table(&t, d.path()).unwrap();
        tamper(d.path());
        assert!(matches!(
            load_finest_table(d.path()),
            Err(TableError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn tampered_mask_with_fixed_checksum_fails_integrity() {
        let t = sample();
        let d = tempfile::tempdir().unwrap();
        save_finest_table(&t, d.path()).unwrap();
        tamper(d.path());
        let rows = fs::read(d.path().join(ROWS_FILE)).unwrap();
        let meta_path = d.path().join(META_FILE);
        let mut meta: serde_json::Value = serde_json::from_slice(&fs::read(&meta_path).unwrap()).unwrap();
        meta["rows_sha256"] = hex::encode(Sha256::digest(&rows)).into();
        fs::write(&meta_path, serde_json::to_vec(&meta).unwrap()).unwrap();
        match load_finest_table(d.path()) {
            Err(TableError::Integrity(msg)) => assert!(msg.contains("SCA"), "{msg}"),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn old_schema_version_rejected() {
        let t = sample();
        let d = tempfile::tempdir().unwrap();
        save_finest_table(&t, d.path()).unwrap();
        let meta_path = d.path().join(META_FILE);
        let mut meta: serde_json::Value = serde_json::from_slice(&fs::read(&meta_path).unwrap()).unwrap();
        meta["schema_version"] = 0.into();
        meta.as_object_mut().unwrap().remove("categories");
        fs::write(&meta_path, serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(
            load_finest_table(d.path()),
            Err(TableError::VersionMismatch { found: 0, expected: 1 })
        ));
    }

    #[test]
    fn malformed_and_missing() {
        let d = tempfile::tempdir().unwrap();
        let err = load_finest_table(d.path()).unwrap_err();
        assert!(err.is_io());
        fs::write(d.path().join(META_FILE), b"{ not json").unwrap();
        assert!(matches!(load_finest_table(d.path()), Err(TableError::Json(_))));
        fs::write(d.path().join(META_FILE), b"{\"format\":\"other\"}").unwrap();
        assert!(matches!(load_finest_table(d.path()), Err(TableError::Malformed(_))));
    }

    #[test]
    fn reordered_rows_rejected() {
        let t = sample();
        let d = tempfile::tempdir().unwrap();
        save_finest_table(&t, d.path()).unwrap();
        let p = d.path().join(ROWS_FILE);
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        let rows = lines.join("\n") + "\n";
        fs::write(&p, &rows).unwrap();
        let meta_path = d.path().join(META_FILE);
        let mut meta: serde_json::Value = serde_json::from_slice(&fs::read(&meta_path).unwrap()).unwrap();
        meta["rows_sha256"] = hex::encode(Sha256::digest(rows.as_bytes())).into();
        fs::write(&meta_path, serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(load_finest_table(d.path()), Err(TableError::Integrity(_))));
    }
}
