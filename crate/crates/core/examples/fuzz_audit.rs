//! Randomized byzantine scenarios in block-fair mode, with the incremental
//! auditor cross-checked against the brute-force oracle.

use fairlab::audit::{audit, oracle_constraints, relative_constraints};
use fairlab::leaders::EngineMode;
use fairlab::simnet::{random_fuzz, run, FuzzProfile};

fn main() {
    let mut violations = 0;
    let mut disagreements = 0;
    for seed in 0..200 {
        let out = run(&random_fuzz(
            seed,
            FuzzProfile::new(EngineMode::Neverending),
        ))
        .expect("runs");
        let report = audit(&out.trace);
        let oracle = oracle_constraints(&out.trace).expect("at most ten requests");
        violations += report.relative_block_fairness.violations.len();
        if oracle.actual.relative != relative_constraints(&out.trace)
            || oracle.actual.relative_holds(&out.trace) != report.relative_block_fairness.holds
        {
            disagreements += 1;
        }
    }
    println!(
        "200 scenarios: {violations} violations, {disagreements} checker/oracle disagreements"
    );
}
