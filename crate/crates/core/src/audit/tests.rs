use super::*;
use crate::simnet::{benign, cycle, run, segments, Record};

fn pair(a: &str, b: &str) -> Pair {
    (a.to_string(), b.to_string())
}

#[test]
fn benign_schedule_holds_with_constraints() {
    let trace = run(&benign(4, 3, EngineMode::Neverending)).unwrap().trace;
    let report = audit(&trace);
    assert!(report.relative_block_fairness.holds);
    assert_eq!(report.relative_block_fairness.constraints, 3);
    assert!(relative_constraints(&trace).contains(&pair("m1", "m2")));
    assert!(report.gating_holds());
    assert!(chain_consistent(&trace));
}

#[test]
fn cycle_has_no_constraints_without_corruption() {
    let trace = run(&cycle(4, EngineMode::Neverending)).unwrap().trace;
    assert!(relative_constraints(&trace).is_empty());
    let oracle = oracle_constraints(&trace).unwrap();
    assert!(oracle.actual.relative.is_empty());
    assert!(oracle.union_is_cyclic());
}

#[test]
fn swapped_blocks_are_reported() {
    let mut trace = run(&benign(4, 3, EngineMode::Neverending)).unwrap().trace;
    let blocks: Vec<usize> = trace
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, Record::Block { .. }))
        .map(|(i, _)| i)
        .collect();
    assert!(blocks.len() >= 2);
    let (i, j) = (blocks[0], blocks[1]);
    let take = |r: &Record| match r {
        Record::Block { requests, .. } => requests.clone(),
        _ => unreachable!(),
    };
    let (a, b) = (take(&trace.records[i]), take(&trace.records[j]));
    if let Record::Block { requests, .. } = &mut trace.records[i] {
        *requests = b;
    }
    if let Record::Block { requests, .. } = &mut trace.records[j] {
        *requests = a;
    }
    let v = check_relative_block_fairness(&trace);
    assert!(!v.holds);
    let oracle = oracle_constraints(&trace).unwrap();
    assert!(!oracle.actual.relative_holds(&trace));
}

#[test]
fn timed_constraints_need_separation() {
    let trace = run(&benign(4, 3, EngineMode::Clocked)).unwrap().trace;
    let c = timed_constraints(&trace);
    assert!(c.contains(&pair("m1", "m3")));
    let oracle = oracle_constraints(&trace).unwrap();
    assert_eq!(oracle.actual.timed, c);
    assert!(check_timed_fairness(&trace).holds);
    let cyc = run(&cycle(4, EngineMode::Clocked)).unwrap().trace;
    assert!(timed_constraints(&cyc).is_empty());
}

#[test]
fn oracle_rejects_large_traces() {
    let trace = run(&segments(4, EngineMode::Neverending).unwrap())
        .unwrap()
        .trace;
    assert_eq!(
        oracle_constraints(&trace),
        Err(AuditError::TooLarge {
            requests: 16,
            limit: 12
        })
    );
}

#[test]
fn segments_force_one_group() {
    let trace = run(&segments(2, EngineMode::Neverending).unwrap())
        .unwrap()
        .trace;
    let oracle = oracle_constraints(&trace).unwrap();
    let groups = oracle.forced_groups();
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0].len(), 8);
    assert!(oracle.actual.relative.contains(&pair("m7", "m4")));
    assert!(oracle.actual.relative.contains(&pair("m3", "m8")));
}
