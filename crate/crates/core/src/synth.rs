//! Seeded census-style microdata generator.
//!
//! Geography is a chain of levels with a fixed number of units each. Units of
//! one level are dealt round-robin over the units of the level above, and a
//! unit's code is its parent's code followed by a zero-padded child index,
//! so every code embeds its ancestors. Records pick a finest unit uniformly
//! and each key category with weight `1 / rank^skew`; larger `skew` means
//! more rare combinations and more small cells.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl SynthError {
    pub fn is_io(&self) -> bool {
        match self {
            SynthError::Io { .. } => true,
            SynthError::Csv(e) => e.is_io_error(),
            SynthError::Invalid(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyColumn {
    pub name: String,
    pub categories: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub records: u64,
    /// Coarse to fine, paired with `level_units`.
    pub hierarchy: Vec<String>,
    /// Number of units at each level; must be non-decreasing.
    pub level_units: Vec<u32>,
    pub keys: Vec<KeyColumn>,
    pub skew: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Census-shaped: 1 → 5 → 78 → 2506 areas and five keys with 2, 18, 9,
    /// 5 and 21 categories.
    fn default() -> Self {
        let keys = [("gender", 2), ("age", 18), ("edu", 9), ("mar", 5), ("htype", 21)]
            .into_iter()
            .map(|(name, categories)| KeyColumn {
                name: name.to_string(),
                categories,
            })
            .collect();
        SynthSpec {
            records: 1_000_000,
            hierarchy: ["LA1", "LA2", "LA3", "OA"].map(String::from).to_vec(),
            level_units: vec![1, 5, 78, 2506],
            keys,
            skew: 1.5,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.records == 0 {
            return bad("record count must be at least 1".into());
        }
        if self.hierarchy.is_empty() {
            return bad("at least one hierarchy level is required".into());
        }
        if self.hierarchy.len() != self.level_units.len() {
            return bad(format!(
                "{} hierarchy names but {} level sizes",
                self.hierarchy.len(),
                self.level_units.len()
            ));
        }
        if self.level_units.contains(&0) {
            return bad("every level needs at least one unit".into());
        }
        if self.level_units.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("level sizes {:?} must be non-decreasing", self.level_units));
        }
        if self.keys.iter().any(|k| k.categories == 0) {
            return bad("every key needs at least one category".into());
        }
        let mut names: Vec<&str> = self.hierarchy.iter().map(String::as_str).collect();
        names.extend(self.keys.iter().map(|k| k.name.as_str()));
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || names[..i].contains(n) {
                return bad(format!("column name `{n}` is empty or repeated"));
            }
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return bad(format!("skew must be finite and >= 0, got {}", self.skew));
        }
        Ok(())
    }

    /// Codes of every finest unit's ancestors, coarse to fine.
    fn unit_paths(&self) -> Vec<Vec<String>> {
        let mut paths: Vec<Vec<String>> = Vec::new();
        for (level, &n) in self.level_units.iter().enumerate() {
            let n = n as usize;
            let parents = paths.len().max(1);
            let width = digits(n.div_ceil(parents)).max(2);
            let mut next = Vec::with_capacity(n);
            for j in 0..n {
                let idx = j / parents + 1;
                let mut path = if level == 0 {
                    Vec::new()
                } else {
                    paths[j % parents].clone()
                };
                let prefix = path.last().map_or("", String::as_str);
                let code = format!("{prefix}{idx:0width$}");
                path.push(code);
                next.push(path);
            }
            paths = next;
        }
        paths
    }
}

fn digits(mut n: usize) -> usize {
    let mut d = 1;
    while n >= 10 {
        n /= 10;
        d += 1;
    }
    d
}

/// Writes `spec.records` rows, header first, comma separated.
pub fn generate_synthetic<W: Write>(spec: &SynthSpec, w: W) -> Result<(), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let paths = spec.unit_paths();
    let unit = Uniform::new(0, paths.len());
    let key_dists: Vec<WeightedIndex<f64>> = spec
        .keys
        .iter()
        .map(|k| {
            let weights = (1..=k.categories).map(|r| (r as f64).powf(-spec.skew));
            WeightedIndex::new(weights).expect("positive weights")
        })
        .collect();
    let key_labels: Vec<Vec<String>> = spec
        .keys
        .iter()
        .map(|k| (1..=k.categories).map(|c| c.to_string()).collect())
        .collect();

    let mut out = csv::Writer::from_writer(w);
    out.write_record(spec.hierarchy.iter().chain(spec.keys.iter().map(|k| &k.name)))?;
    let mut record: Vec<&str> = Vec::with_capacity(spec.hierarchy.len() + spec.keys.len());
    for _ in 0..spec.records {
        record.clear();
        record.extend(paths[unit.sample(&mut rng)].iter().map(String::as_str));
        for (dist, labels) in key_dists.iter().zip(&key_labels) {
            record.push(&labels[dist.sample(&mut rng)]);
        }
        out.write_record(&record)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn generate_synthetic_path(spec: &SynthSpec, path: &Path) -> Result<(), SynthError> {
    spec.validate()?;
    let io = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    generate_synthetic(spec, &mut w)?;
    w.flush().map_err(io)
}
