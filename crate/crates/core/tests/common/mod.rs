#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use freqmask::audit::{analytic_violation, enumerate_feasible_cells, invert_mechanism, AttackInstance, Mechanism};
use freqmask::masking::{feasible_interval, Shift};
use freqmask::synth::{generate_synthetic, SynthSpec};
use freqmask::table::{
    aggregate_table, build_finest_table, ingest_csv, query_cell, AggregationRequest, CellQuery, FinestTable,
    HierarchySpec, IngestOptions, KeySpec,
};
use freqmask::{apply_ilba, SmallCellPartition, Threshold};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn k(v: u64) -> Threshold {
    Threshold::new(v).unwrap()
}

pub fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Per sum, per slot: bitmask of values some slot vector with that sum
/// gives the slot. Slots are S_K first, then S₀.
fn slot_masks(s0: u64, sk: u64, kv: u64) -> BTreeMap<u64, Vec<u64>> {
    fn rec(slot: usize, sk: usize, n: usize, kv: u64, vals: &mut Vec<u64>, out: &mut BTreeMap<u64, Vec<u64>>) {
        if slot == n {
            let sum: u64 = vals.iter().sum();
            let masks = out.entry(sum).or_insert_with(|| vec![0; n]);
            for (m, &v) in masks.iter_mut().zip(vals.iter()) {
                *m |= 1 << v;
            }
            return;
        }
        let range = if slot < sk { 1..=kv } else { 0..=kv - 1 };
        for v in range {
            vals.push(v);
            rec(slot + 1, sk, n, kv, vals, out);
            vals.pop();
        }
    }
    let n = (s0 + sk) as usize;
    let mut out = BTreeMap::new();
    rec(0, sk as usize, n, kv, &mut Vec::with_capacity(n), &mut out);
    out
}

fn masks_for(table: &BTreeMap<u64, Vec<u64>>, sums: &BTreeSet<u64>, n: usize) -> Vec<u64> {
    let mut acc = vec![0u64; n];
    for s in sums {
        if let Some(m) = table.get(s) {
            for (a, b) in acc.iter_mut().zip(m) {
                *a |= b;
            }
        }
    }
    acc
}

fn mask_to_set(m: u64) -> BTreeSet<u64> {
    (0..64).filter(|b| m >> b & 1 == 1).collect()
}

#[derive(Debug, Default)]
pub struct GridReport {
    pub cases: usize,
    pub releases_attacked: usize,
    pub failures: Vec<String>,
}

/// Every guarantee on the grid `K in ks`, `s0, sk in 0..=max`, `|S| >= 2`,
/// every small-cell sum in D.
pub fn exhaustive_guarantees(ks: &[u64], max: u64) -> GridReport {
    let mut rep = GridReport::default();
    let fail = |rep: &mut GridReport, msg: String| {
        if rep.failures.len() < 50 {
            rep.failures.push(msg);
        }
    };
    for &kv in ks {
        let thr = k(kv);
        let half = kv / 2;
        for s0 in 0..=max {
            for sk in 0..=max {
                if s0 + sk < 2 {
                    continue;
                }
                let n = (s0 + sk) as usize;
                let d = feasible_interval(s0, sk, thr).unwrap();
                let oracle = slot_masks(s0, sk, kv);
                // independent check of the interval itself
                let keys: BTreeSet<u64> = oracle.keys().copied().collect();
                if keys != d.iter().collect() {
                    fail(&mut rep, format!("K={kv} s0={s0} sk={sk}: D mismatch"));
                }

                let mut by_release: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
                for g in d.iter() {
                    let p = SmallCellPartition::from_counts(s0, sk, g, 0, thr);
                    let tr = apply_ilba(&p, thr).unwrap();
                    by_release.entry(tr.masked_small).or_default().insert(g);
                }

                for g in d.iter() {
                    rep.cases += 1;
                    let p = SmallCellPartition::from_counts(s0, sk, g, 0, thr);
                    let tr = apply_ilba(&p, thr).unwrap();
                    let v = tr.masked_small;
                    let tag = format!("K={kv} s0={s0} sk={sk} f_S={g} -> {v}");
                    // (a)
                    if v != 0 && v < kv {
                        fail(&mut rep, format!("{tag}: output in 1..K"));
                    }
                    // (b)
                    let loss = v.abs_diff(g);
                    if loss > half + kv {
                        fail(&mut rep, format!("{tag}: loss {loss} above bound"));
                    }
                    if tr.shift() == Shift::None && !tr.post_processed() && loss > half {
                        fail(&mut rep, format!("{tag}: loss {loss} above unshifted bound"));
                    }
                    if let Some(steps) = &tr.steps {
                        if !steps.shifted_candidates(thr).all(|c| d.contains(c)) {
                            fail(&mut rep, format!("{tag}: shifted candidates leave D"));
                        }
                    }
                    // (c), for releases of observed groups
                    if g >= 1 {
                        let cands = &by_release[&v];
                        if (cands.len() as u64) < kv {
                            fail(&mut rep, format!("{tag}: ambiguity {}", cands.len()));
                        }
                        let inst = AttackInstance {
                            s0_size: s0,
                            sk_size: sk,
                            k: thr,
                            released_small: v,
                            mechanism: Mechanism::Ilba,
                        };
                        match invert_mechanism(&inst) {
                            Ok(inv) if &inv == cands => {}
                            other => fail(&mut rep, format!("{tag}: inversion {other:?} != {cands:?}")),
                        }
                    }
                    // (e)
                    let exact = masks_for(&oracle, &BTreeSet::from([g]), n);
                    let sk_exposed = exact[..sk as usize].iter().any(|m| m >> kv & 1 == 0);
                    let s0_exposed = exact[sk as usize..].iter().any(|m| m & 1 == 0);
                    let a = analytic_violation(s0, sk, thr, g).unwrap();
                    if (a.violates_sk, a.violates_s0) != (sk_exposed, s0_exposed) {
                        fail(
                            &mut rep,
                            format!("{tag}: analytic {a:?} vs brute force ({sk_exposed}, {s0_exposed})"),
                        );
                    }
                }

                // (d), once per distinct release
                for (v, cands) in &by_release {
                    rep.releases_attacked += 1;
                    let tag = format!("K={kv} s0={s0} sk={sk} release {v}");
                    let lib = enumerate_feasible_cells(s0, sk, thr, cands).unwrap();
                    if !lib.violations.is_empty() {
                        fail(&mut rep, format!("{tag}: violations {:?}", lib.violations));
                    }
                    let want = masks_for(&oracle, cands, n);
                    for (i, (slot, m)) in lib.slots.iter().zip(&want).enumerate() {
                        if slot.values != mask_to_set(*m) {
                            fail(&mut rep, format!("{tag}: slot {i} {:?} vs oracle", slot.values));
                        }
                    }
                    let exposed = want[..sk as usize].iter().any(|m| m >> kv & 1 == 0)
                        || want[sk as usize..].iter().any(|m| m & 1 == 0);
                    if exposed {
                        fail(&mut rep, format!("{tag}: oracle finds an exposed cell"));
                    }
                }
            }
        }
    }
    rep
}

pub fn census_spec(records: u64, seed: u64) -> SynthSpec {
    SynthSpec {
        records,
        seed,
        ..SynthSpec::default()
    }
}

pub fn synthetic_csv(spec: &SynthSpec) -> Vec<u8> {
    let mut buf = Vec::new();
    generate_synthetic(spec, &mut buf).unwrap();
    buf
}

pub fn build_from_csv(spec: &SynthSpec, csv: &[u8], seed: u64) -> FinestTable {
    let h = HierarchySpec::new(spec.hierarchy.clone(), None).unwrap();
    let data = ingest_csv(csv, &IngestOptions::new(h)).unwrap();
    build_finest_table(&data, Threshold::DEFAULT, seed).unwrap()
}

/// Random (level, key subset) requests, always including the deepest level
/// with every key.
pub fn random_requests(table: &FinestTable, n: usize, rng: &mut impl Rng) -> Vec<AggregationRequest> {
    let keys = &table.keys().names;
    let mut out = vec![AggregationRequest::new(table.depth(), keys.clone())];
    while out.len() < n {
        let level = rng.gen_range(1..=table.depth());
        let mut ks: Vec<String> = keys.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
        ks.shuffle(rng);
        out.push(AggregationRequest::new(level, ks));
    }
    out
}

/// Compares `query_cell` with the aggregated entry for `per_request` random
/// cells of each request. Returns the number of cells compared.
pub fn query_matches_aggregate(
    table: &FinestTable,
    requests: &[AggregationRequest],
    per_request: usize,
    seed: u64,
) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for req in requests {
        let agg = aggregate_table(table, req).map_err(|e| e.to_string())?;
        for _ in 0..per_request {
            let row = &agg.rows[rng.gen_range(0..agg.rows.len())];
            let labels: Vec<&str> = agg.labels(row).collect();
            let q = CellQuery {
                level: req.level,
                unit: labels[req.level - 1].to_string(),
                keys: req
                    .keys
                    .iter()
                    .cloned()
                    .zip(labels[req.level..].iter().map(|s| s.to_string()))
                    .collect(),
            };
            let ans = query_cell(table, &q).map_err(|e| e.to_string())?;
            if ans.masked_count != row.masked_count || ans.partition != row.partition {
                return Err(format!(
                    "{q:?}: query {} ({:?}) vs aggregate {} ({:?})",
                    ans.masked_count, ans.partition, row.masked_count, row.partition
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Label combinations absent from `table`, with hierarchy paths taken from
/// existing rows so nesting still holds.
pub fn absent_combos(table: &FinestTable, n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let present: HashSet<Vec<String>> = table
        .rows()
        .map(|r| table.labels(r.codes).map(str::to_owned).collect())
        .collect();
    let depth = table.depth();
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut picked = HashSet::new();
    while out.len() < n {
        let base = table.row(rng.gen_range(0..table.n_rows()));
        let mut combo: Vec<String> = table.labels(base.codes).map(str::to_owned).collect();
        for (slot, d) in combo[depth..].iter_mut().zip(&table.dims()[depth..]) {
            *slot = d.labels[rng.gen_range(0..d.cardinality())].clone();
        }
        if !present.contains(&combo) && picked.insert(combo.clone()) {
            out.push(combo);
        }
    }
    out
}

/// The example group plus a second unit: 18 age cells, five of them small.
pub fn worked_group_table() -> FinestTable {
    let smalls: [(u64, u64); 5] = [(1, 5), (1, 5), (2, 5), (1, 5), (1, 0)];
    let larges: [u64; 13] = [36, 284, 262, 200, 150, 120, 100, 60, 40, 30, 20, 12, 6];
    assert_eq!(larges.iter().sum::<u64>(), 1320);
    let mut rows = Vec::new();
    let mut age = 0;
    for &(t, m) in &smalls {
        age += 1;
        rows.push((strings(&["01", "0101", "010101", "2", "2", &age.to_string()]), t, m));
    }
    for &t in &larges {
        age += 1;
        rows.push((strings(&["01", "0101", "010101", "2", "2", &age.to_string()]), t, t));
    }
    rows.push((strings(&["01", "0101", "010102", "1", "1", "1"]), 40, 40));
    let h = HierarchySpec::new(strings(&["L1", "L2", "L3"]), None).unwrap();
    let keys = KeySpec {
        names: strings(&["gender", "edu", "age"]),
        key_thr: 100,
        excluded: vec![],
    };
    FinestTable::from_labeled_rows(h, keys, Threshold::DEFAULT, 0, rows).unwrap()
}
