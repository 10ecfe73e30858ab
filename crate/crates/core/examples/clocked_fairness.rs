//! Clocked mode on randomized adversarial scenarios, checked by the
//! timed-fairness auditor.

use fairlab::audit::audit;
use fairlab::leaders::EngineMode;
use fairlab::simnet::{random_fuzz, run, FuzzProfile};

fn main() {
    let (mut blocks, mut constraints, mut violations) = (0, 0, 0);
    for seed in 0..100 {
        let out = run(&random_fuzz(seed, FuzzProfile::new(EngineMode::Clocked)))
            .expect("fuzz scenario runs");
        let report = audit(&out.trace);
        blocks += out.stats.blocks;
        constraints += report.timed_fairness.constraints;
        violations += report.timed_fairness.violations.len();
    }
    println!(
        "100 scenarios: {blocks} blocks, {constraints} timed constraints, {violations} violations"
    );
}
