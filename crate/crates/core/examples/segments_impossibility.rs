//! Chained segment families keep the block-fair candidate growing for as
//! long as the adversary keeps injecting requests.
//!
//! Usage: cargo run --example segments_impossibility -- [depth]

use fairlab::leaders::EngineMode;
use fairlab::simnet::{run, segments};

fn main() {
    let depth: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(5);
    let sc = segments(depth, EngineMode::Neverending).expect("depth >= 2");
    let out = run(&sc).expect("segment scenario runs");
    let s = &out.stats;
    println!("requests               {}", sc.requests.len());
    println!("blocks while injecting {}", s.blocks_before_stop);
    println!("pending at stop        {}", s.pending_at_stop);
    println!("largest candidate      {} ({} while injecting)", s.max_order, s.max_order_before_stop);
    for b in out.trace.blocks() {
        println!(
            "block {} after drain: {} requests",
            b.number,
            b.requests.len()
        );
    }
}
