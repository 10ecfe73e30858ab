use std::collections::BTreeMap;

use super::{CandidateBlock, EngineEvent, LeaderState, Proposal, ProposalMode, StopRule};
use crate::fairness::blocks;
use crate::model::RequestId;

/// `blocking[i][j]`: request `i` blocks request `j`, over one snapshot.
pub(super) struct BlockingMatrix {
    ids: Vec<RequestId>,
    pos: BTreeMap<RequestId, usize>,
    blocking: Vec<Vec<bool>>,
}

impl BlockingMatrix {
    pub(super) fn new(state: &LeaderState, ids: Vec<RequestId>) -> Self {
        let blocking = ids
            .iter()
            .map(|a| {
                ids.iter()
                    .map(|b| blocks(&state.store, &state.catalog, a, b))
                    .collect()
            })
            .collect();
        let pos = ids.iter().enumerate().map(|(i, r)| (*r, i)).collect();
        BlockingMatrix { ids, pos, blocking }
    }

    /// Known requests outside `members` that block some member.
    pub(super) fn outside_blockers(&self, members: &[RequestId]) -> Vec<RequestId> {
        let inside: Vec<usize> = members
            .iter()
            .filter_map(|m| self.pos.get(m).copied())
            .collect();
        self.ids
            .iter()
            .enumerate()
            .filter(|(i, r)| !members.contains(r) && inside.iter().any(|j| self.blocking[*i][*j]))
            .map(|(_, r)| *r)
            .collect()
    }

    pub(super) fn blocks(&self, a: &RequestId, b: &RequestId) -> bool {
        match (self.pos.get(a), self.pos.get(b)) {
            (Some(i), Some(j)) => self.blocking[*i][*j],
            _ => false,
        }
    }
}

/// Result of growing a candidate as far as the votes allow.
struct Closure {
    block: CandidateBlock,
    /// Outside requests still blocking a member but lacking the votes to join.
    stuck: bool,
}

impl LeaderState {
    fn close(
        &self,
        matrix: &BlockingMatrix,
        mut block: CandidateBlock,
        threshold: usize,
    ) -> Closure {
        loop {
            let blockers = matrix.outside_blockers(&block.members);
            if blockers.is_empty() {
                return Closure {
                    block,
                    stuck: false,
                };
            }
            let addable: Vec<RequestId> = blockers
                .into_iter()
                .filter(|r| self.store.vote_count(r) >= threshold)
                .collect();
            if addable.is_empty() {
                return Closure { block, stuck: true };
            }
            block.members.extend(addable);
        }
    }

    /// One step of the neverending engine. Returns the proposal once no
    /// request outside the candidate blocks a member.
    pub fn neverending_step(&mut self) -> Option<Proposal> {
        if self.emitted {
            return None;
        }
        let strong = self.cfg.strong_threshold();
        let block = match self.candidates.values().next() {
            Some(b) => b.clone(),
            None => {
                let seed = self.first_with_quorum(strong)?;
                self.events.push(EngineEvent::Seeded { request: seed });
                CandidateBlock::new(seed)
            }
        };
        let matrix = BlockingMatrix::new(self, self.known());
        let Closure { block, stuck } = self.close(&matrix, block, strong);
        self.note_order(block.order());
        if stuck {
            self.candidates = BTreeMap::from([(block.seed, block)]);
            return None;
        }
        self.candidates.clear();
        Some(self.emit(block.members, ProposalMode::BlockFair, None))
    }

    /// One step of the hybrid engine: finalize a candidate when possible,
    /// otherwise check the cutoff and run the timed fallback once it trips.
    pub fn hybrid_step(&mut self) -> Vec<Proposal> {
        if self.emitted {
            return Vec::new();
        }
        if self.fallback_active {
            return self.fallback_step().into_iter().collect();
        }
        let weak = self.cfg.weak_threshold();
        let known = self.known();
        let matrix = BlockingMatrix::new(self, known.clone());
        let mut grown = BTreeMap::new();
        let mut ready = Vec::new();
        for seed in known.iter().filter(|r| self.store.vote_count(r) >= weak) {
            let closure = self.close(&matrix, CandidateBlock::new(*seed), weak);
            let block = self.minimize(&matrix, closure.block);
            if !closure.stuck {
                let at = self.store.quorum_reached_at(seed, weak).unwrap_or(u64::MAX);
                ready.push((at, *seed));
            }
            grown.insert(*seed, block);
        }
        for seed in grown.keys() {
            if !self.candidates.contains_key(seed) {
                self.events.push(EngineEvent::Seeded { request: *seed });
            }
        }
        let order = grown.values().map(CandidateBlock::order).max().unwrap_or(0);
        self.note_order(order);
        if let Some((_, seed)) = ready.into_iter().min() {
            let block = grown.remove(&seed).expect("ready seeds have candidates");
            self.candidates.clear();
            return vec![self.emit(block.members, ProposalMode::BlockFair, None)];
        }
        self.candidates = grown;
        if order > self.hybrid.r_max && self.should_stop(order - self.hybrid.r_max) {
            self.fallback_active = true;
            self.fallback_backlog = Some(self.backlog());
            self.candidates.clear();
            self.events.push(EngineEvent::FallbackEntered { order });
            return self.fallback_step().into_iter().collect();
        }
        Vec::new()
    }

    /// Drops non-seed members that no longer block any other member.
    fn minimize(&self, matrix: &BlockingMatrix, mut block: CandidateBlock) -> CandidateBlock {
        loop {
            let members = block.members.clone();
            let idle = members
                .iter()
                .skip(1)
                .find(|x| !members.iter().any(|m| m != *x && matrix.blocks(x, m)));
            match idle {
                Some(x) => {
                    let x = *x;
                    block.members.retain(|m| *m != x);
                }
                None => return block,
            }
        }
    }

    fn should_stop(&mut self, excess: usize) -> bool {
        match self.hybrid.stop {
            StopRule::Threshold => true,
            StopRule::Coin {
                seed,
                stop_probability,
            } => {
                while self.coin_checked < excess {
                    self.coin_checked += 1;
                    if self.coin_stop(seed, stop_probability) {
                        return true;
                    }
                }
                false
            }
        }
    }
}
