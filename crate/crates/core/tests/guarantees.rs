mod common;

use std::collections::BTreeSet;

use common::{exhaustive_guarantees, k};
use freqmask::audit::{
    audit_instance, enumerate_feasible_cells, invert_mechanism, project_feasible_cells, AttackInstance, Mechanism,
    SlotKind, DEFAULT_CELL_BUDGET,
};
use freqmask::masking::feasible_interval;
use freqmask::{apply_ilba, SmallCellPartition};

#[test]
fn exhaustive_grid_has_no_counterexample() {
    let rep = exhaustive_guarantees(&[3, 4, 5], 4);
    assert!(rep.failures.is_empty(), "{:#?}", rep.failures);
    // |D| = (K - 1)|S| + 1 summed over the grid
    let expected: u64 = [3u64, 4, 5]
        .iter()
        .flat_map(|&kv| (0..=4u64).flat_map(move |s0| (0..=4u64).map(move |sk| (kv, s0 + sk))))
        .filter(|&(_, n)| n >= 2)
        .map(|(kv, n)| (kv - 1) * n + 1)
        .sum();
    assert_eq!(rep.cases as u64, expected);
}

#[test]
fn small_thresholds_outside_the_proven_range() {
    // K = 2 is accepted; report what holds there without asserting the
    // ambiguity floor
    let rep = exhaustive_guarantees(&[2], 4);
    let non_ambiguity: Vec<_> = rep.failures.iter().filter(|f| !f.contains("ambiguity")).collect();
    assert!(non_ambiguity.is_empty(), "{non_ambiguity:#?}");
}

#[test]
fn projection_equals_enumeration_on_grid() {
    for kv in 3..=5u64 {
        for s0 in 0..=4u64 {
            for sk in 0..=4u64 {
                if s0 + sk == 0 {
                    continue;
                }
                let d = feasible_interval(s0, sk, k(kv)).unwrap();
                let mut sets: Vec<BTreeSet<u64>> = d.iter().map(|g| BTreeSet::from([g])).collect();
                for g in d.iter() {
                    let p = SmallCellPartition::from_counts(s0, sk, g, 0, k(kv));
                    let v = apply_ilba(&p, k(kv)).unwrap().masked_small;
                    let inst = AttackInstance {
                        s0_size: s0,
                        sk_size: sk,
                        k: k(kv),
                        released_small: v,
                        mechanism: Mechanism::Ilba,
                    };
                    sets.push(invert_mechanism(&inst).unwrap());
                }
                for sums in &sets {
                    let e = enumerate_feasible_cells(s0, sk, k(kv), sums).unwrap();
                    let p = project_feasible_cells(s0, sk, k(kv), sums).unwrap();
                    assert_eq!(e.slots, p.slots, "K={kv} s0={s0} sk={sk} sums={sums:?}");
                    assert_eq!(e.violations, p.violations);
                }
            }
        }
    }
}

#[test]
fn pitfall_configurations() {
    let f = enumerate_feasible_cells(1, 4, k(5), &BTreeSet::from([6])).unwrap();
    assert_eq!(f.count_violations(SlotKind::K), 4);
    assert_eq!(f.count_violations(SlotKind::Zero), 0);
    assert_eq!(f.distinct_configurations, Some(4));
    // ordered vectors: (2,1,1,1|1), (2,2,1,1|0), (3,1,1,1|0), (1,1,1,1|2)
    // counted with their S_K permutations
    assert_eq!(f.configurations, Some(4 + 6 + 4 + 1));
}

#[test]
fn exact_sum_release_of_worked_group_is_exposed_but_ilba_is_not() {
    let exact = AttackInstance {
        s0_size: 1,
        sk_size: 4,
        k: k(5),
        released_small: 6,
        mechanism: Mechanism::ExactSum,
    };
    let v = audit_instance(&exact, DEFAULT_CELL_BUDGET).unwrap();
    assert_eq!(v.violations().len(), 4);
    assert_eq!((v.residual_low, v.residual_up), (Some(2), Some(18)));

    let ilba = AttackInstance {
        released_small: 8,
        mechanism: Mechanism::Ilba,
        ..exact
    };
    let v = audit_instance(&ilba, DEFAULT_CELL_BUDGET).unwrap();
    assert!(v.violations().is_empty());
    assert_eq!(v.candidate_sums, (4..=10).collect());
}

#[test]
fn large_groups_stay_safe_via_projection() {
    // far past the brute-force budget
    for (s0, sk) in [(40, 0), (0, 40), (25, 30), (3, 60)] {
        let d = feasible_interval(s0, sk, k(5)).unwrap();
        for g in d.iter().step_by(7).filter(|&g| g > 0) {
            let p = SmallCellPartition::from_counts(s0, sk, g, 0, k(5));
            let inst = AttackInstance {
                s0_size: s0,
                sk_size: sk,
                k: k(5),
                released_small: apply_ilba(&p, k(5)).unwrap().masked_small,
                mechanism: Mechanism::Ilba,
            };
            let v = audit_instance(&inst, DEFAULT_CELL_BUDGET).unwrap();
            assert!(v.violations().is_empty(), "s0={s0} sk={sk} g={g}");
            assert!(v.ambiguity >= 5);
        }
    }
}
