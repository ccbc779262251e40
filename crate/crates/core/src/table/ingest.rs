use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{label_cmp, Dimension, HierarchySpec, KeySpec, Result, TableError, DEFAULT_KEY_THR};

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub hierarchy: HierarchySpec,
    /// `None` uses every non-hierarchical column.
    pub keys: Option<Vec<String>>,
    pub key_thr: usize,
    pub delimiter: u8,
}

impl IngestOptions {
    pub fn new(hierarchy: HierarchySpec) -> Self {
        IngestOptions {
            hierarchy,
            keys: None,
            key_thr: DEFAULT_KEY_THR,
            delimiter: b',',
        }
    }
}

/// Dictionary-encoded microdata, one code per record per column, validated
/// for hierarchy nesting.
#[derive(Debug, Clone)]
pub struct Microdata {
    pub(crate) hierarchy: HierarchySpec,
    pub(crate) keys: KeySpec,
    /// Hierarchy levels coarse to fine, then keys.
    pub(crate) dims: Vec<Dimension>,
    pub(crate) columns: Vec<Vec<u32>>,
    pub(crate) n_records: usize,
}

impl Microdata {
    pub fn hierarchy(&self) -> &HierarchySpec {
        &self.hierarchy
    }

    pub fn keys(&self) -> &KeySpec {
        &self.keys
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    /// Number of categories per column, hierarchy levels first.
    pub fn category_counts(&self) -> Vec<(&str, usize)> {
        self.dims.iter().map(|d| (d.name.as_str(), d.cardinality())).collect()
    }
}

pub fn ingest_csv_path(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Microdata> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TableError::io(path, e))?;
    ingest_csv(file, opts)
}

/// Reads delimited text with a header row, one record per individual.
pub fn ingest_csv<R: Read>(reader: R, opts: &IngestOptions) -> Result<Microdata> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    for (i, h) in header.iter().enumerate() {
        if header[..i].contains(h) {
            return Err(TableError::DuplicateColumn(h.clone()));
        }
    }
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TableError::MissingColumn(name.to_owned()))
    };

    let levels = opts.hierarchy.levels();
    let key_names: Vec<String> = match &opts.keys {
        Some(keys) => {
            for (i, k) in keys.iter().enumerate() {
                if levels.contains(k) {
                    return Err(TableError::KeyIsHierarchy(k.clone()));
                }
                if keys[..i].contains(k) {
                    return Err(TableError::RepeatedKey(k.clone()));
                }
            }
            keys.clone()
        }
        None => header.iter().filter(|h| !levels.contains(h)).cloned().collect(),
    };
    let names: Vec<&str> = levels.iter().chain(&key_names).map(String::as_str).collect();
    let positions = names.iter().map(|n| position(n)).collect::<Result<Vec<_>>>()?;

    let mut encoders: Vec<Encoder> = names.iter().map(|_| Encoder::default()).collect();
    let mut record = csv::StringRecord::new();
    let mut n_records = 0usize;
    while rdr.read_record(&mut record)? {
        for (enc, &pos) in encoders.iter_mut().zip(&positions) {
            enc.push(record.get(pos).unwrap_or(""));
        }
        n_records += 1;
    }
    if n_records == 0 {
        return Err(TableError::EmptyInput);
    }

    let mut dims = Vec::with_capacity(names.len());
    let mut columns = Vec::with_capacity(names.len());
    for (name, enc) in names.iter().zip(encoders) {
        let (labels, codes) = enc.finish();
        dims.push(Dimension {
            name: (*name).to_owned(),
            labels,
        });
        columns.push(codes);
    }

    // Drop keys over the category cap.
    let depth = levels.len();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    let mut i = depth;
    while i < dims.len() {
        if dims[i].cardinality() > opts.key_thr {
            log::warn!(
                "key `{}` has {} categories (> key_thr {}); excluded",
                dims[i].name,
                dims[i].cardinality(),
                opts.key_thr
            );
            excluded.push(dims.remove(i).name);
            columns.remove(i);
        } else {
            kept.push(dims[i].name.clone());
            i += 1;
        }
    }

    check_nesting(&dims[..depth], &columns[..depth])?;

    Ok(Microdata {
        hierarchy: opts.hierarchy.clone(),
        keys: KeySpec {
            names: kept,
            key_thr: opts.key_thr,
            excluded,
        },
        dims,
        columns,
        n_records,
    })
}

/// Every unit of level r+1 must sit under a single unit of level r.
pub(crate) fn check_nesting(dims: &[Dimension], columns: &[Vec<u32>]) -> Result<()> {
    for lvl in 1..dims.len() {
        let (coarse, fine) = (&columns[lvl - 1], &columns[lvl]);
        let mut parent = vec![u32::MAX; dims[lvl].cardinality()];
        for (&c, &f) in coarse.iter().zip(fine) {
            let p = &mut parent[f as usize];
            if *p == u32::MAX {
                *p = c;
            } else if *p != c {
                return Err(TableError::NestingViolation {
                    level: dims[lvl].name.clone(),
                    unit: dims[lvl].label(f).to_owned(),
                    parent_level: dims[lvl - 1].name.clone(),
                    first: dims[lvl - 1].label(*p).to_owned(),
                    second: dims[lvl - 1].label(c).to_owned(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Default)]
struct Encoder {
    index: HashMap<String, u32>,
    labels: Vec<String>,
    codes: Vec<u32>,
}

impl Encoder {
    fn push(&mut self, label: &str) {
        let code = match self.index.get(label) {
            Some(&c) => c,
            None => {
                let c = self.labels.len() as u32;
                self.index.insert(label.to_owned(), c);
                self.labels.push(label.to_owned());
                c
            }
        };
        self.codes.push(code);
    }

    /// Relabels first-seen codes into canonical label order.
    fn finish(self) -> (Vec<String>, Vec<u32>) {
        let mut order: Vec<u32> = (0..self.labels.len() as u32).collect();
        order.sort_by(|&a, &b| label_cmp(&self.labels[a as usize], &self.labels[b as usize]));
        let mut remap = vec![0u32; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        let mut labels = self.labels;
        let sorted = order.iter().map(|&o| std::mem::take(&mut labels[o as usize])).collect();
        let codes = self.codes.into_iter().map(|c| remap[c as usize]).collect();
        (sorted, codes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(names: &[&str], ranks: Option<Vec<u32>>) -> HierarchySpec {
        HierarchySpec::new(names.iter().map(|s| s.to_string()).collect(), ranks).unwrap()
    }

    const SMALL: &str = "\
LA1,LA2,LA3,gender,age
01,0101,010101,1,10
01,0101,010101,2,2
01,0102,010201,1,2
01,0101,010102,1,1
";

    #[test]
    fn defaults_keys_and_encodes() {
        let md = ingest_csv(SMALL.as_bytes(), &IngestOptions::new(h(&["LA1", "LA2", "LA3"], None))).unwrap();
        assert_eq!(md.n_records(), 4);
        assert_eq!(md.keys().names, vec!["gender", "age"]);
        assert_eq!(
            md.category_counts(),
            vec![("LA1", 1), ("LA2", 2), ("LA3", 3), ("gender", 2), ("age", 3)]
        );
        let age = &md.dims()[4];
        assert_eq!(age.labels, vec!["1", "2", "10"]);
        assert_eq!(md.columns[4], vec![2, 1, 1, 0]);
    }

    #[test]
    fn ranks_reorder_columns() {
        let opts = IngestOptions::new(h(&["LA2", "LA1", "LA3"], Some(vec![2, 1, 3])));
        let md = ingest_csv(SMALL.as_bytes(), &opts).unwrap();
        let names: Vec<_> = md.dims().iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["LA1", "LA2", "LA3", "gender", "age"]);
    }

    #[test]
    fn nesting_violation_names_unit_and_parents() {
        let data = "A,B,k\n1,x,1\n2,x,1\n";
        let err = ingest_csv(data.as_bytes(), &IngestOptions::new(h(&["A", "B"], None))).unwrap_err();
        match err {
            TableError::NestingViolation {
                level,
                unit,
                first,
                second,
                ..
            } => {
                assert_eq!((level.as_str(), unit.as_str()), ("B", "x"));
                assert_eq!((first.as_str(), second.as_str()), ("1", "2"));
            }
            e => panic!("unexpected {e}"),
        }
        // same data is fine when declared the other way round
        let ok = ingest_csv(data.as_bytes(), &IngestOptions::new(h(&["B", "A"], None)));
        assert!(ok.is_ok());
    }

    #[test]
    fn missing_column_and_empty() {
        let mut opts = IngestOptions::new(h(&["LA1"], None));
        opts.keys = Some(vec!["income".into()]);
        assert!(matches!(
            ingest_csv(SMALL.as_bytes(), &opts),
            Err(TableError::MissingColumn(c)) if c == "income"
        ));
        let opts = IngestOptions::new(h(&["OA"], None));
        assert!(matches!(
            ingest_csv(SMALL.as_bytes(), &opts),
            Err(TableError::MissingColumn(_))
        ));
        let opts = IngestOptions::new(h(&["LA1"], None));
        assert!(matches!(
            ingest_csv("LA1,g\n".as_bytes(), &opts),
            Err(TableError::EmptyInput)
        ));
    }

    #[test]
    fn key_overlapping_hierarchy_rejected() {
        let mut opts = IngestOptions::new(h(&["LA1"], None));
        opts.keys = Some(vec!["LA1".into()]);
        assert!(matches!(
            ingest_csv(SMALL.as_bytes(), &opts),
            Err(TableError::KeyIsHierarchy(_))
        ));
    }

    #[test]
    fn key_threshold_excludes_wide_keys() {
        let mut data = String::from("area,id,g\n");
        for i in 0..150 {
            data.push_str(&format!("a,{i},{}\n", i % 2));
        }
        let opts = IngestOptions::new(h(&["area"], None));
        let md = ingest_csv(data.as_bytes(), &opts).unwrap();
        assert_eq!(md.keys().names, vec!["g"]);
        assert_eq!(md.keys().excluded, vec!["id"]);
        assert_eq!(md.dims().len(), 2);
        assert_eq!(md.columns.len(), 2);
    }

    #[test]
    fn semicolon_delimiter() {
        let mut opts = IngestOptions::new(h(&["a"], None));
        opts.delimiter = b';';
        let md = ingest_csv("a;b\nx;1\ny;2\n".as_bytes(), &opts).unwrap();
        assert_eq!(md.keys().names, vec!["b"]);
    }
}
