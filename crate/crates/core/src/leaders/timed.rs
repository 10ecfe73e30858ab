use std::collections::BTreeSet;

use super::{EngineEvent, LeaderState, Proposal, ProposalMode, TimedPivot};
use crate::fairness::{max_median, median_timestamp, timed_precedes_at};
use crate::model::{PartyId, RequestId, Timestamp};

impl LeaderState {
    /// Same-market live requests other than the pivot with some vote
    /// timestamped below `median`.
    fn timed_backlog(&self, pivot: &RequestId, median: Timestamp) -> Vec<RequestId> {
        self.known()
            .into_iter()
            .filter(|r| r != pivot && self.catalog.same_market(r, pivot))
            .filter(|r| self.store.timestamps_for(r).iter().any(|t| *t < median))
            .collect()
    }

    /// Pivot plus every backlog request with a weak quorum of votes below
    /// the median, ordered by (median vote time, id).
    fn timed_block(&self, pivot: TimedPivot, backlog: &[RequestId]) -> Vec<RequestId> {
        let mut members: Vec<RequestId> = std::iter::once(pivot.request)
            .chain(
                backlog
                    .iter()
                    .filter(|r| timed_precedes_at(&self.store, r, pivot.median))
                    .copied(),
            )
            .collect();
        members.sort_by_cached_key(|r| (self.request_median(r), *r));
        members
    }

    pub(crate) fn request_median(&self, r: &RequestId) -> Option<Timestamp> {
        median_timestamp(&self.store.timestamps_for(r)).ok()
    }

    /// Median over the first strong quorum of votes accepted for `r`.
    fn first_quorum_median(&self, r: &RequestId) -> Option<Timestamp> {
        let mut refs: Vec<_> = self.store.vote_refs(r)?.values().copied().collect();
        refs.sort_by_key(|v| v.accepted_at);
        let ts: Vec<Timestamp> = refs
            .iter()
            .take(self.cfg.strong_threshold())
            .filter_map(|v| v.ts)
            .collect();
        if ts.len() < self.cfg.strong_threshold() {
            return None;
        }
        median_timestamp(&ts).ok()
    }

    /// One step of the clocked engine. Emits once a common strong quorum of
    /// active parties has voted for every request in the backlog.
    pub fn clocked_step(&mut self) -> Option<Proposal> {
        if self.emitted {
            return None;
        }
        let pivot = match self.pivot {
            Some(p) => p,
            None => {
                let seed = self.first_with_quorum(self.cfg.strong_threshold())?;
                let median = self.first_quorum_median(&seed)?;
                let p = TimedPivot {
                    request: seed,
                    median,
                };
                self.events.push(EngineEvent::Seeded { request: seed });
                self.pivot = Some(p);
                p
            }
        };
        let backlog = self.timed_backlog(&pivot.request, pivot.median);
        self.note_order(backlog.len() + 1);
        let common: BTreeSet<PartyId> = self
            .store
            .logs()
            .iter()
            .filter(|l| l.is_active())
            .map(|l| l.party)
            .filter(|p| {
                backlog
                    .iter()
                    .all(|r| self.store.vote_refs(r).is_some_and(|m| m.contains_key(p)))
            })
            .collect();
        if !self.cfg.strong_quorum(common.len()) {
            return None;
        }
        let members = self.timed_block(pivot, &backlog);
        Some(self.emit(members, ProposalMode::TimedFair, Some(pivot)))
    }

    /// Timed fallback of the hybrid engine. The pivot is the request with a
    /// strong quorum whose largest subset median is highest when the
    /// fallback first finds one. The fallback stays on, block after block,
    /// until every request known at entry is delivered.
    pub(super) fn fallback_step(&mut self) -> Option<Proposal> {
        let strong = self.cfg.strong_threshold();
        // The pivot request is fixed the first time one qualifies; its
        // median may still rise as further votes arrive.
        let request = match self.fallback_pivot {
            Some(r) => r,
            None => {
                let best = self
                    .known()
                    .into_iter()
                    .filter(|r| self.store.vote_count(r) >= strong)
                    .filter_map(|r| max_median(&self.store, &r).ok())
                    .max_by(|a, b| a.median.cmp(&b.median).then(b.request.cmp(&a.request)))?;
                self.fallback_pivot = Some(best.request);
                best.request
            }
        };
        let pivot = TimedPivot {
            request,
            median: max_median(&self.store, &request).ok()?.median,
        };
        let backlog = self.timed_backlog(&pivot.request, pivot.median);
        let settled = backlog.iter().all(|r| {
            self.store.vote_count(r) >= strong || timed_precedes_at(&self.store, r, pivot.median)
        });
        if !settled {
            return None;
        }
        let members = self.timed_block(pivot, &backlog);
        if let Some(b) = self.fallback_backlog.as_mut() {
            b.retain(|r| !members.contains(r));
        }
        self.fallback_active = self
            .fallback_backlog
            .as_ref()
            .is_some_and(|b| !b.is_empty());
        Some(self.emit(members, ProposalMode::TimedFair, Some(pivot)))
    }
}
