//! Differencing-attack simulation.
//!
//! The attacker sees the masked finest table (so, per group, how many small
//! cells were masked to 0 and how many to K), the released aggregate, K and
//! the full masking rules. From that they infer which small-cell sums are
//! possible and then which values each small cell can take. A small cell is
//! exposed when it provably lies in `1..K`: an S_K cell that can never be K,
//! or an S₀ cell that can never be 0.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::{apply_ilba, apply_sca, feasible_interval, MaskError, SmallCellPartition, Threshold};
use crate::table::{aggregate_table, AggregationRequest, FinestTable, TableError};

/// Largest number of slot vectors [`enumerate_feasible_cells`] will visit.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

/// Per-cell brute-force budget used by [`audit_release`] before it switches
/// to [`project_feasible_cells`].
pub const DEFAULT_CELL_BUDGET: u64 = 10_000;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("attack instance has no small cells")]
    NoSmallCells,
    #[error("released value {released} cannot be produced by {mechanism} for s0={s0}, sk={sk}, K={k}")]
    Unreachable {
        released: u64,
        mechanism: Mechanism,
        s0: u64,
        sk: u64,
        k: u64,
    },
    #[error("enumeration needs {needed} vectors, budget is {budget}; use the analytic path")]
    BudgetExceeded { needed: String, budget: u64 },
    #[error("small-cell sum {f_small} outside feasible interval {lower}..={upper}")]
    OutsideInterval { f_small: u64, lower: u64, upper: u64 },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

/// How the small-cell sum of a group was released.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    /// The true sum itself.
    ExactSum,
    /// SCA applied once to the sum. Unsafe; kept to reproduce the leak.
    NaiveScaOfSum,
    Ilba,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::ExactSum => "exact-sum",
            Mechanism::NaiveScaOfSum => "naive-sca-of-sum",
            Mechanism::Ilba => "ilba",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackInstance {
    pub s0_size: u64,
    pub sk_size: u64,
    pub k: Threshold,
    pub released_small: u64,
    pub mechanism: Mechanism,
}

/// Small-cell sums consistent with the release under the known mechanism,
/// restricted to the feasible interval D.
pub fn invert_mechanism(inst: &AttackInstance) -> Result<BTreeSet<u64>> {
    let d = feasible_interval(inst.s0_size, inst.sk_size, inst.k).map_err(|_| AuditError::NoSmallCells)?;
    let k = inst.k.get();
    let v = inst.released_small;
    let sums: BTreeSet<u64> = match inst.mechanism {
        Mechanism::ExactSum => d.iter().filter(|&g| g == v).collect(),
        Mechanism::NaiveScaOfSum => d
            .iter()
            .filter(|&g| match g {
                g if g > k => v == g,
                g => (v == 0 && g < k) || (v == k && g > 0),
            })
            .collect(),
        Mechanism::Ilba => {
            let mut out = BTreeSet::new();
            for g in d.iter() {
                let p = SmallCellPartition::from_counts(inst.s0_size, inst.sk_size, g, 0, inst.k);
                if apply_ilba(&p, inst.k)?.masked_small == v {
                    out.insert(g);
                }
            }
            out
        }
    };
    if sums.is_empty() {
        return Err(AuditError::Unreachable {
            released: v,
            mechanism: inst.mechanism,
            s0: inst.s0_size,
            sk: inst.sk_size,
            k,
        });
    }
    Ok(sums)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    /// Masked to 0; true count in `0..K`.
    Zero,
    /// Masked to K; true count in `1..=K`.
    K,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotFeasibility {
    pub kind: SlotKind,
    pub values: BTreeSet<u64>,
}

/// Per-slot feasible values. Slots are listed S_K first, then S₀.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeasibleCells {
    pub slots: Vec<SlotFeasibility>,
    /// Indices into `slots` that are provably in `1..K`.
    pub violations: Vec<usize>,
    /// Number of slot vectors hitting an admissible sum (enumeration only).
    pub configurations: Option<u64>,
    /// Same, counted up to permutation within S_K and within S₀.
    pub distinct_configurations: Option<usize>,
}

impl FeasibleCells {
    fn from_slots(slots: Vec<SlotFeasibility>, k: u64) -> Self {
        let violations = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| match s.kind {
                SlotKind::K => !s.values.contains(&k),
                SlotKind::Zero => !s.values.contains(&0),
            })
            .map(|(i, _)| i)
            .collect();
        FeasibleCells {
            slots,
            violations,
            configurations: None,
            distinct_configurations: None,
        }
    }

    pub fn count_violations(&self, kind: SlotKind) -> usize {
        self.violations.iter().filter(|&&i| self.slots[i].kind == kind).count()
    }
}

fn slot_kinds(s0: u64, sk: u64) -> Vec<SlotKind> {
    std::iter::repeat_n(SlotKind::K, sk as usize)
        .chain(std::iter::repeat_n(SlotKind::Zero, s0 as usize))
        .collect()
}

/// Brute force: visits every vector with S_K slots in `1..=K` and S₀ slots
/// in `0..K`, keeping those whose sum is in `sums`.
pub fn enumerate_feasible_cells(s0: u64, sk: u64, k: Threshold, sums: &BTreeSet<u64>) -> Result<FeasibleCells> {
    let kv = k.get();
    let n = s0 + sk;
    if n == 0 {
        return Err(AuditError::NoSmallCells);
    }
    let needed = u32::try_from(n).ok().and_then(|n| kv.checked_pow(n));
    match needed {
        Some(x) if x <= ENUMERATION_BUDGET => {}
        _ => {
            return Err(AuditError::BudgetExceeded {
                needed: needed.map_or_else(|| format!("{kv}^{n}"), |x| x.to_string()),
                budget: ENUMERATION_BUDGET,
            })
        }
    }

    let kinds = slot_kinds(s0, sk);
    let lows: Vec<u64> = kinds.iter().map(|k| if *k == SlotKind::K { 1 } else { 0 }).collect();
    let mut values = lows.clone();
    let mut sum: u64 = lows.iter().sum();
    let mut seen: Vec<Vec<bool>> = vec![vec![false; kv as usize + 1]; kinds.len()];
    let mut configurations = 0u64;
    let mut distinct: HashSet<Vec<u64>> = HashSet::new();
    let sk = sk as usize;

    loop {
        if sums.contains(&sum) {
            configurations += 1;
            for (slot, &v) in seen.iter_mut().zip(&values) {
                slot[v as usize] = true;
            }
            let mut canon = values.clone();
            canon[..sk].sort_unstable_by(|a, b| b.cmp(a));
            canon[sk..].sort_unstable_by(|a, b| b.cmp(a));
            distinct.insert(canon);
        }
        // odometer step
        let mut i = 0;
        loop {
            if i == values.len() {
                let slots = kinds
                    .iter()
                    .zip(seen)
                    .map(|(&kind, s)| SlotFeasibility {
                        kind,
                        values: s
                            .iter()
                            .enumerate()
                            .filter(|(_, &b)| b)
                            .map(|(v, _)| v as u64)
                            .collect(),
                    })
                    .collect();
                let mut out = FeasibleCells::from_slots(slots, kv);
                out.configurations = Some(configurations);
                out.distinct_configurations = Some(distinct.len());
                return Ok(out);
            }
            if values[i] < lows[i] + kv - 1 {
                values[i] += 1;
                sum += 1;
                break;
            }
            sum -= values[i] - lows[i];
            values[i] = lows[i];
            i += 1;
        }
    }
}

/// Exact per-slot feasibility without enumeration.
///
/// The remaining slots range independently over integer intervals, so their
/// possible totals form one contiguous interval `[lo, hi]`. Value `v` is
/// feasible for a slot iff some admissible sum lies in `[v + lo, v + hi]`.
pub fn project_feasible_cells(s0: u64, sk: u64, k: Threshold, sums: &BTreeSet<u64>) -> Result<FeasibleCells> {
    let kv = k.get();
    if s0 + sk == 0 {
        return Err(AuditError::NoSmallCells);
    }
    let project = |kind: SlotKind| {
        let (others_s0, others_sk, range) = match kind {
            SlotKind::K => (s0, sk - 1, 1..=kv),
            SlotKind::Zero => (s0 - 1, sk, 0..=kv - 1),
        };
        let lo = others_sk;
        let hi = kv * others_sk + (kv - 1) * others_s0;
        let values: BTreeSet<u64> = range
            .filter(|&v| sums.range(v + lo..=v + hi).next().is_some())
            .collect();
        SlotFeasibility { kind, values }
    };
    let sk_slot = (sk > 0).then(|| project(SlotKind::K));
    let s0_slot = (s0 > 0).then(|| project(SlotKind::Zero));
    let slots = slot_kinds(s0, sk)
        .into_iter()
        .map(|kind| match kind {
            SlotKind::K => sk_slot.clone().unwrap(),
            SlotKind::Zero => s0_slot.clone().unwrap(),
        })
        .collect();
    Ok(FeasibleCells::from_slots(slots, kv))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AnalyticVerdict {
    pub violates_sk: bool,
    pub violates_s0: bool,
    /// R = f_S - |S_K|, slack above the all-minimum assignment.
    pub residual_low: u64,
    /// R^up = U - f_S, slack below the all-maximum assignment.
    pub residual_up: u64,
}

/// Closed-form exposure test against an attacker who knows `f_small`
/// exactly: S_K cells are exposed when `R < K - 1`, S₀ cells when
/// `R^up < K - 1`.
pub fn analytic_violation(s0: u64, sk: u64, k: Threshold, f_small: u64) -> Result<AnalyticVerdict> {
    let d = feasible_interval(s0, sk, k).map_err(|_| AuditError::NoSmallCells)?;
    if !d.contains(f_small) {
        return Err(AuditError::OutsideInterval {
            f_small,
            lower: d.lower,
            upper: d.upper,
        });
    }
    let residual_low = f_small - d.lower;
    let residual_up = d.upper - f_small;
    let kv = k.get();
    Ok(AnalyticVerdict {
        violates_sk: sk >= 1 && residual_low < kv - 1,
        violates_s0: s0 >= 1 && residual_up < kv - 1,
        residual_low,
        residual_up,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditVerdict {
    pub candidate_sums: BTreeSet<u64>,
    pub feasible: FeasibleCells,
    pub ambiguity: u64,
    pub residual_low: Option<u64>,
    pub residual_up: Option<u64>,
}

impl AuditVerdict {
    pub fn violations(&self) -> &[usize] {
        &self.feasible.violations
    }
}

/// Inverts the mechanism and projects onto the slots, by enumeration when
/// `K^|S| <= budget` and by [`project_feasible_cells`] otherwise.
pub fn audit_instance(inst: &AttackInstance, budget: u64) -> Result<AuditVerdict> {
    let sums = invert_mechanism(inst)?;
    let n = inst.s0_size + inst.sk_size;
    let small_enough = u32::try_from(n)
        .ok()
        .and_then(|n| inst.k.get().checked_pow(n))
        .is_some_and(|x| x <= budget.min(ENUMERATION_BUDGET));
    let feasible = if small_enough {
        enumerate_feasible_cells(inst.s0_size, inst.sk_size, inst.k, &sums)?
    } else {
        project_feasible_cells(inst.s0_size, inst.sk_size, inst.k, &sums)?
    };
    let (residual_low, residual_up) = match inst.mechanism {
        Mechanism::ExactSum => {
            let a = analytic_violation(inst.s0_size, inst.sk_size, inst.k, inst.released_small)?;
            (Some(a.residual_low), Some(a.residual_up))
        }
        _ => (None, None),
    };
    Ok(AuditVerdict {
        ambiguity: sums.len() as u64,
        candidate_sums: sums,
        feasible,
        residual_low,
        residual_up,
    })
}

/// Mechanism used to produce the release under audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReleaseMechanism {
    Ilba,
    /// SCA on each group's small-cell sum, drawn in canonical group order.
    NaiveScaOfSum {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct AuditOptions {
    pub mechanism: ReleaseMechanism,
    pub cell_budget: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            mechanism: ReleaseMechanism::Ilba,
            cell_budget: DEFAULT_CELL_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellAudit {
    pub group: Vec<String>,
    pub s0_size: u64,
    pub sk_size: u64,
    pub released: u64,
    pub released_small: u64,
    pub ambiguity: u64,
    pub sk_violations: usize,
    pub s0_violations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditSummary {
    pub mechanism: String,
    pub k: u64,
    pub cells: usize,
    pub audited: usize,
    pub failed: usize,
    pub min_ambiguity: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub level: usize,
    pub keys: Vec<String>,
    pub summary: AuditSummary,
    /// Only groups with at least two small cells; the rest release either
    /// exact large sums or a stored finest-level mask.
    pub cells: Vec<CellAudit>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellAudit> {
        self.cells.iter().filter(|c| !c.passed)
    }
}

/// Rebuilds the release for `req` on the trusted side and attacks every
/// group with two or more small cells. A group fails if any of its small
/// cells is exposed or fewer than K sums remain plausible.
pub fn audit_release(table: &FinestTable, req: &AggregationRequest, opts: &AuditOptions) -> Result<AuditReport> {
    let agg = aggregate_table(table, req)?;
    let k = table.k();
    let (mechanism, mut rng) = match opts.mechanism {
        ReleaseMechanism::Ilba => (Mechanism::Ilba, None),
        ReleaseMechanism::NaiveScaOfSum { seed } => (Mechanism::NaiveScaOfSum, Some(ChaCha20Rng::seed_from_u64(seed))),
    };

    let mut cells = Vec::new();
    for row in &agg.rows {
        let p = row.partition;
        if p.small_count() < 2 {
            continue;
        }
        let released_small = match rng.as_mut() {
            None => row.masked_count - p.f_large,
            Some(rng) => apply_sca(p.f_small, k, rng).masked,
        };
        let inst = AttackInstance {
            s0_size: p.s0_size,
            sk_size: p.sk_size,
            k,
            released_small,
            mechanism,
        };
        let v = audit_instance(&inst, opts.cell_budget)?;
        let sk_violations = v.feasible.count_violations(SlotKind::K);
        let s0_violations = v.feasible.count_violations(SlotKind::Zero);
        cells.push(CellAudit {
            group: agg.labels(row).map(str::to_owned).collect(),
            s0_size: p.s0_size,
            sk_size: p.sk_size,
            released: p.f_large + released_small,
            released_small,
            ambiguity: v.ambiguity,
            sk_violations,
            s0_violations,
            passed: sk_violations + s0_violations == 0 && v.ambiguity >= k.get(),
        });
    }

    let summary = AuditSummary {
        mechanism: mechanism.to_string(),
        k: k.get(),
        cells: agg.rows.len(),
        audited: cells.len(),
        failed: cells.iter().filter(|c| !c.passed).count(),
        min_ambiguity: cells.iter().map(|c| c.ambiguity).min(),
    };
    Ok(AuditReport {
        level: req.level,
        keys: req.keys.clone(),
        summary,
        cells,
    })
}
