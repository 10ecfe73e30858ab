//! The hybrid engine gives up on block fairness once a candidate grows past
//! r_max and falls back to a timed block.

use fairlab::audit::audit;
use fairlab::leaders::EngineMode;
use fairlab::simnet::{run, segments, Record};

fn main() {
    let mut sc = segments(4, EngineMode::Hybrid).expect("depth >= 2");
    sc.r_max = Some(6);
    let out = run(&sc).expect("hybrid scenario runs");
    for r in &out.trace.records {
        if let Record::Block {
            number,
            mode,
            pivot,
            requests,
            post_cutoff,
            ..
        } = r
        {
            println!(
                "block {number} {mode:?} pivot={pivot:?} post_cutoff={post_cutoff}: {requests:?}"
            );
        }
    }
    println!("fallback activations: {}", out.stats.fallback_activations);
    println!("{}", audit(&out.trace));
}
