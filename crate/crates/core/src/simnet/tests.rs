use super::*;
use crate::leaders::EngineMode;

#[test]
fn empty_schedule_has_no_blocks() {
    let mut sc = benign(4, 0, EngineMode::Neverending);
    sc.events.clear();
    let out = run(&sc).unwrap();
    assert_eq!(out.stats.blocks, 0);
    assert!(out.trace.blocks().is_empty());
}

#[test]
fn cycle_yields_one_block_of_all_four() {
    let out = run(&cycle(4, EngineMode::Neverending)).unwrap();
    let blocks = out.trace.blocks();
    assert_eq!(blocks.len(), 1, "{blocks:?}");
    let mut reqs = blocks[0].requests.clone();
    reqs.sort();
    assert_eq!(reqs, vec!["m1", "m2", "m3", "m4"]);
}

#[test]
fn runs_are_deterministic() {
    for sc in [
        cycle(4, EngineMode::Hybrid),
        segments(2, EngineMode::Neverending).unwrap(),
    ] {
        let a = run(&sc).unwrap().trace.to_jsonl();
        let b = run(&sc).unwrap().trace.to_jsonl();
        assert_eq!(a, b);
    }
}

#[test]
fn benign_delivers_everything() {
    for mode in [
        EngineMode::Neverending,
        EngineMode::Clocked,
        EngineMode::Hybrid,
    ] {
        let out = run(&benign(4, 5, mode)).unwrap();
        assert_eq!(out.stats.delivered, 5, "{mode:?}");
        assert_eq!(out.stats.pending, 0);
    }
}

#[test]
fn segments_hold_back_until_the_stop() {
    for k in [2, 3, 5, 10] {
        let out = run(&segments(k, EngineMode::Neverending).unwrap()).unwrap();
        let s = &out.stats;
        assert_eq!(s.blocks_before_stop, 0, "k={k}");
        assert_eq!(s.max_order, 4 * k, "k={k}");
        assert_eq!(s.pending_at_stop, 4 * k, "k={k}");
        assert_eq!(s.blocks, 1, "k={k}");
        assert_eq!(s.delivered, 4 * k);
        println!("k={k} {s:?}");
    }
}
