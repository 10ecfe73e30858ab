//! The largest median over all strong-quorum-sized vote subsets equals the
//! median of the largest timestamps.

use fairlab::fairness::{largest_subset_median, median_timestamp};
use fairlab::model::Timestamp;

fn main() {
    let ts: Vec<Timestamp> = [10, 40, 20, 30].into_iter().map(Timestamp).collect();
    let k = 3;
    let mut best = Timestamp(0);
    for skip in 0..ts.len() {
        let subset: Vec<Timestamp> = ts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, t)| *t)
            .collect();
        let m = median_timestamp(&subset).expect("non-empty");
        println!("without {:>2}: median {}", ts[skip].0, m.0);
        best = best.max(m);
    }
    println!(
        "enumerated {} / shortcut {}",
        best.0,
        largest_subset_median(&ts, k).expect("enough votes").0
    );
}
