use std::collections::{BTreeMap, BTreeSet};

use fairlab::abc::verify_export;
use fairlab::leaders::EngineMode;
use fairlab::simnet::{random_fuzz, run, FuzzProfile, Record, Trace};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = EngineMode> {
    prop_oneof![
        Just(EngineMode::Neverending),
        Just(EngineMode::Clocked),
        Just(EngineMode::Hybrid),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn honest_clocks_are_monotone(seed in any::<u64>(), mode in mode()) {
        let out = run(&random_fuzz(seed, FuzzProfile::new(mode))).unwrap();
        let mut last: BTreeMap<u32, u64> = BTreeMap::new();
        for (_, party, _, ts) in out.trace.honest_sightings() {
            if let Some(prev) = last.insert(party, ts) {
                prop_assert!(ts > prev, "party {party}: {ts} after {prev}");
            }
        }
    }

    #[test]
    fn honestly_seen_requests_are_delivered_once(seed in any::<u64>(), mode in mode()) {
        let out = run(&random_fuzz(seed, FuzzProfile::new(mode))).unwrap();
        let mut delivered = BTreeSet::new();
        for b in out.trace.blocks() {
            for r in b.requests {
                prop_assert!(delivered.insert(r.clone()), "{r} delivered twice");
            }
        }
        for (_, _, r, _) in out.trace.honest_sightings() {
            prop_assert!(delivered.contains(r), "{r} seen but never delivered");
        }
        prop_assert_eq!(out.stats.pending, 0);
    }

    #[test]
    fn every_accepted_block_verifies(seed in any::<u64>(), mode in mode()) {
        let out = run(&random_fuzz(seed, FuzzProfile::new(mode))).unwrap();
        let audit = verify_export(&out.chain.export_jsonl()).unwrap();
        prop_assert!(audit.ok(), "{:?}", audit.failures);
        prop_assert_eq!(audit.blocks, out.stats.blocks);
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), mode in mode()) {
        let sc = random_fuzz(seed, FuzzProfile::new(mode));
        let a = run(&sc).unwrap().trace.to_jsonl();
        let b = run(&sc).unwrap().trace.to_jsonl();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn traces_round_trip(seed in any::<u64>(), mode in mode()) {
        let out = run(&random_fuzz(seed, FuzzProfile::new(mode))).unwrap();
        let text = out.trace.to_jsonl();
        let back = Trace::from_jsonl(&text).unwrap();
        prop_assert_eq!(&back, &out.trace);
        prop_assert_eq!(back.stats(), Some(&out.stats));
    }

    #[test]
    fn blocks_follow_chain_order(seed in any::<u64>(), mode in mode()) {
        let out = run(&random_fuzz(seed, FuzzProfile::new(mode))).unwrap();
        let numbers: Vec<u64> = out
            .trace
            .records
            .iter()
            .filter_map(|r| match r {
                Record::Block { number, .. } => Some(*number),
                _ => None,
            })
            .collect();
        prop_assert_eq!(numbers, (0..out.stats.blocks as u64).collect::<Vec<_>>());
    }
}
