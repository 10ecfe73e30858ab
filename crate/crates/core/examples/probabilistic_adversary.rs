//! When every pending message slips through with probability p after each
//! adversary step, the segment construction eventually breaks down.

use fairlab::leaders::EngineMode;
use fairlab::simnet::{probabilistic, run, segments};

fn main() {
    let base = segments(10, EngineMode::Neverending).expect("depth >= 2");
    for p in [0.05, 0.2, 0.5, 1.0] {
        let seeds = 50;
        let mut total = 0;
        let mut early = 0;
        for seed in 0..seeds {
            let out =
                run(&probabilistic(base.clone(), p, seed).expect("p in range")).expect("runs");
            total += out.stats.first_block_step.unwrap_or(out.stats.steps);
            if out.stats.blocks_before_stop > 0 {
                early += 1;
            }
        }
        println!(
            "p={p:<5} mean first block at step {:>7.1}, terminated while injecting in {early}/{seeds}",
            total as f64 / seeds as f64
        );
    }
}
