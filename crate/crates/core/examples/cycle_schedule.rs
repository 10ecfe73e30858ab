//! The rotation schedule: no pair is seen in the same order by everyone, yet
//! every single corruption hypothesis orders one pair. The union is a cycle,
//! so the block-fair engine must put all four requests in one block.

use fairlab::audit::oracle_constraints;
use fairlab::leaders::EngineMode;
use fairlab::simnet::{cycle, run};

fn main() {
    let out = run(&cycle(4, EngineMode::Neverending)).expect("cycle scenario runs");
    let oracle = oracle_constraints(&out.trace).expect("four requests fit the oracle");
    for h in &oracle.hypotheses {
        let pairs: Vec<String> = h
            .relative
            .iter()
            .map(|(a, b)| format!("{a} < {b}"))
            .collect();
        println!("corrupt {:?}: {}", h.corrupt, pairs.join(", "));
    }
    println!("forced into one block: {:?}", oracle.forced_groups());
    for b in out.trace.blocks() {
        println!("block {}: {:?}", b.number, b.requests);
    }
}
