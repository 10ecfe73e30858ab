//! Decision predicates shared by the leader engines and the verifiers.

use thiserror::Error;

use crate::model::{Catalog, QuorumConfig, RequestId, Timestamp};
use crate::votes::VoteStore;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FairnessError {
    #[error("median of an empty set")]
    EmptyMedian,
    #[error("request has {have} timestamped votes, {need} required")]
    TooFewVotes { have: usize, need: usize },
}

/// `r2` blocks `r` while the current votes cannot rule out that every honest
/// party saw `r2` first. A weak quorum reporting `r` before `r2` rules it out.
pub fn blocks(store: &VoteStore, catalog: &Catalog, r2: &RequestId, r: &RequestId) -> bool {
    if r2 == r || !catalog.same_market(r2, r) {
        return false;
    }
    !store.cfg().weak_quorum(store.count_before(r, r2))
}

/// Lower median: the middle element for odd sizes, the lower of the two
/// middle elements for even sizes.
pub fn median_timestamp(ts: &[Timestamp]) -> Result<Timestamp, FairnessError> {
    if ts.is_empty() {
        return Err(FairnessError::EmptyMedian);
    }
    let mut sorted = ts.to_vec();
    sorted.sort_unstable();
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// Largest median over all `k`-subsets: the median of the `k` largest values.
pub fn largest_subset_median(ts: &[Timestamp], k: usize) -> Result<Timestamp, FairnessError> {
    if k == 0 {
        return Err(FairnessError::EmptyMedian);
    }
    if ts.len() < k {
        return Err(FairnessError::TooFewVotes {
            have: ts.len(),
            need: k,
        });
    }
    let mut sorted = ts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    median_timestamp(&sorted[..k])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedianSummary {
    pub request: RequestId,
    pub timestamps: Vec<Timestamp>,
    pub median: Timestamp,
}

/// The largest median of any strong-quorum-sized set of votes for `r`.
pub fn max_median(store: &VoteStore, r: &RequestId) -> Result<MedianSummary, FairnessError> {
    let mut timestamps = store.timestamps_for(r);
    timestamps.sort_unstable();
    let median = largest_subset_median(&timestamps, store.cfg().strong_threshold())?;
    Ok(MedianSummary {
        request: *r,
        timestamps,
        median,
    })
}

/// Whether at least `t + 1` votes for `r2` are timestamped strictly below `pivot`.
pub fn timed_precedes_at(store: &VoteStore, r2: &RequestId, pivot: Timestamp) -> bool {
    count_below(store.cfg(), &store.timestamps_for(r2), pivot)
}

pub fn timed_precedes(store: &VoteStore, r2: &RequestId, pivot: &MedianSummary) -> bool {
    r2 != &pivot.request && timed_precedes_at(store, r2, pivot.median)
}

pub(crate) fn count_below(cfg: QuorumConfig, ts: &[Timestamp], pivot: Timestamp) -> bool {
    cfg.weak_quorum(ts.iter().filter(|t| **t < pivot).count())
}
