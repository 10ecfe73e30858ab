//! Leader engines.
//!
//! Each engine is a deterministic state machine over a [`VoteStore`]: feed it
//! votes, call its step function, collect proposals. Three engines share the
//! state type:
//!
//! * **neverending** grows one candidate block from the first request with a
//!   strong quorum until nothing outside blocks anything inside. It is safe
//!   but an adversarial schedule can keep it growing forever.
//! * **clocked** uses timestamped votes: the pivot request's median vote time
//!   decides which other requests must ship with it. It always terminates.
//! * **hybrid** keeps one candidate per request with a weak quorum, finalizes
//!   any candidate nothing outside blocks, and falls back to the clocked rule
//!   once a candidate grows past `r_max`.

mod block_fair;
mod timed;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{BlockNumber, Catalog, QuorumConfig, RequestId, Timestamp};
use crate::votes::{Vote, VoteMode, VoteStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineMode {
    Neverending,
    Clocked,
    Hybrid,
}

impl EngineMode {
    pub fn vote_mode(self) -> VoteMode {
        match self {
            EngineMode::Neverending => VoteMode::Plain,
            EngineMode::Clocked | EngineMode::Hybrid => VoteMode::Timestamped,
        }
    }
}

impl std::fmt::Display for EngineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EngineMode::Neverending => "neverending",
            EngineMode::Clocked => "clocked",
            EngineMode::Hybrid => "hybrid",
        })
    }
}

impl std::str::FromStr for EngineMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "neverending" => Ok(EngineMode::Neverending),
            "clocked" => Ok(EngineMode::Clocked),
            "hybrid" => Ok(EngineMode::Hybrid),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// When the hybrid engine gives up on block fairness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StopRule {
    /// Switch as soon as a candidate exceeds `r_max`.
    Threshold,
    /// After each admission past `r_max`, flip a shared coin that stops with
    /// the given probability.
    Coin { seed: u64, stop_probability: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridParams {
    pub r_max: usize,
    pub stop: StopRule,
}

impl Default for HybridParams {
    fn default() -> Self {
        HybridParams {
            r_max: usize::MAX,
            stop: StopRule::Threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalMode {
    BlockFair,
    TimedFair,
}

/// The request whose median vote time decided a timed block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedPivot {
    pub request: RequestId,
    pub median: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub block: BlockNumber,
    pub requests: Vec<RequestId>,
    pub mode: ProposalMode,
    pub pivot: Option<TimedPivot>,
    /// Every accepted vote the leader holds, per voter in sequence order.
    pub justification: Vec<Vote>,
}

/// A set of requests that must ship together, grown from `seed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateBlock {
    pub seed: RequestId,
    /// Members in admission order; the seed comes first.
    pub members: Vec<RequestId>,
}

impl CandidateBlock {
    fn new(seed: RequestId) -> Self {
        CandidateBlock {
            seed,
            members: vec![seed],
        }
    }

    pub fn order(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, r: &RequestId) -> bool {
        self.members.contains(r)
    }
}

/// Notable engine transitions, drained by the simulator into the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "event")]
pub enum EngineEvent {
    Seeded {
        request: RequestId,
    },
    Grew {
        order: usize,
    },
    FallbackEntered {
        order: usize,
    },
    Proposed {
        block: BlockNumber,
        size: usize,
        mode: ProposalMode,
    },
}

#[derive(Debug, Clone)]
pub struct LeaderState {
    cfg: QuorumConfig,
    mode: EngineMode,
    hybrid: HybridParams,
    catalog: Arc<Catalog>,
    store: VoteStore,
    candidates: BTreeMap<RequestId, CandidateBlock>,
    pivot: Option<TimedPivot>,
    fallback_active: bool,
    fallback_pivot: Option<RequestId>,
    /// Requests the fallback has to deliver before block-fair mode resumes;
    /// None outside a fallback episode.
    fallback_backlog: Option<BTreeSet<RequestId>>,
    coin_checked: usize,
    delivered: BTreeSet<RequestId>,
    out_queue: Vec<Proposal>,
    emitted: bool,
    max_order: usize,
    events: Vec<EngineEvent>,
}

impl LeaderState {
    pub fn new(
        store: VoteStore,
        mode: EngineMode,
        hybrid: HybridParams,
        catalog: Arc<Catalog>,
    ) -> Self {
        assert_eq!(
            store.mode(),
            mode.vote_mode(),
            "vote mode does not match engine"
        );
        LeaderState {
            cfg: store.cfg(),
            mode,
            hybrid,
            catalog,
            store,
            candidates: BTreeMap::new(),
            pivot: None,
            fallback_active: false,
            fallback_pivot: None,
            fallback_backlog: None,
            coin_checked: 0,
            delivered: BTreeSet::new(),
            out_queue: Vec::new(),
            emitted: false,
            max_order: 0,
            events: Vec::new(),
        }
    }

    pub fn cfg(&self) -> QuorumConfig {
        self.cfg
    }

    pub fn mode(&self) -> EngineMode {
        self.mode
    }

    pub fn hybrid_params(&self) -> HybridParams {
        self.hybrid
    }

    pub fn store(&self) -> &VoteStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut VoteStore {
        &mut self.store
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn block(&self) -> BlockNumber {
        self.store.block()
    }

    pub fn candidates(&self) -> impl Iterator<Item = &CandidateBlock> {
        self.candidates.values()
    }

    pub fn fallback_active(&self) -> bool {
        self.fallback_active
    }

    pub fn delivered(&self) -> &BTreeSet<RequestId> {
        &self.delivered
    }

    /// Proposals emitted so far, oldest first.
    pub fn out_queue(&self) -> &[Proposal] {
        &self.out_queue
    }

    pub fn has_emitted(&self) -> bool {
        self.emitted
    }

    /// Largest candidate order observed in this incarnation.
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn take_events(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.events)
    }

    /// Runs whichever engine this state was built for.
    pub fn step(&mut self) -> Vec<Proposal> {
        match self.mode {
            EngineMode::Neverending => self.neverending_step().into_iter().collect(),
            EngineMode::Clocked => self.clocked_step().into_iter().collect(),
            EngineMode::Hybrid => self.hybrid_step(),
        }
    }

    fn live(&self, r: &RequestId) -> bool {
        !self.delivered.contains(r)
    }

    /// Undelivered requests with at least one accepted vote.
    fn known(&self) -> Vec<RequestId> {
        self.store
            .known_requests()
            .filter(|r| self.live(r))
            .copied()
            .collect()
    }

    /// The request whose `k`-th vote was accepted earliest; ties by id.
    fn first_with_quorum(&self, k: usize) -> Option<RequestId> {
        self.known()
            .into_iter()
            .filter_map(|r| self.store.quorum_reached_at(&r, k).map(|at| (at, r)))
            .min()
            .map(|(_, r)| r)
    }

    fn note_order(&mut self, order: usize) {
        if order > self.max_order {
            self.max_order = order;
            self.events.push(EngineEvent::Grew { order });
        }
    }

    fn emit(
        &mut self,
        requests: Vec<RequestId>,
        mode: ProposalMode,
        pivot: Option<TimedPivot>,
    ) -> Proposal {
        debug_assert!(!requests.is_empty());
        let proposal = Proposal {
            block: self.block(),
            requests,
            mode,
            pivot,
            justification: self.store.accepted_votes().cloned().collect(),
        };
        self.events.push(EngineEvent::Proposed {
            block: proposal.block,
            size: proposal.requests.len(),
            mode,
        });
        self.emitted = true;
        self.out_queue.push(proposal.clone());
        proposal
    }

    /// Deterministic shared coin for the hybrid cutoff, evaluated for the
    /// current block and the number of admissions past `r_max` seen so far.
    pub fn coin_stop(&self, shared_seed: u64, stop_probability: f64) -> bool {
        coin_flip(
            shared_seed,
            self.block(),
            self.coin_checked as u64,
            stop_probability,
        )
    }

    /// Fresh state for `next_block`. Votes for requests in `delivered` (or
    /// delivered earlier) are dropped; the rest are replayed per voter in
    /// their original order with dense sequence numbers.
    pub fn replay_undelivered(
        &self,
        delivered: &BTreeSet<RequestId>,
        next_block: BlockNumber,
    ) -> LeaderState {
        self.replay_after(delivered, next_block, ProposalMode::BlockFair)
    }

    /// Like [`replay_undelivered`](Self::replay_undelivered), given the mode
    /// of the block just delivered. A timed-fair block in hybrid mode means
    /// some leader hit the cutoff, so every engine that was not already in
    /// the fallback joins it for the requests it currently knows.
    pub fn replay_after(
        &self,
        delivered: &BTreeSet<RequestId>,
        next_block: BlockNumber,
        last: ProposalMode,
    ) -> LeaderState {
        let mut all = self.delivered.clone();
        all.extend(delivered.iter().copied());
        let store = self.store.replayed(next_block, |r| all.contains(r));
        let mut fresh = LeaderState::new(store, self.mode, self.hybrid, Arc::clone(&self.catalog));
        fresh.delivered = all;
        let backlog = match &self.fallback_backlog {
            Some(b) => Some(b.iter().filter(|r| fresh.live(r)).copied().collect()),
            None if self.mode == EngineMode::Hybrid && last == ProposalMode::TimedFair => {
                Some(fresh.backlog())
            }
            None => None,
        };
        fresh.fallback_backlog = backlog.filter(|b: &BTreeSet<RequestId>| !b.is_empty());
        fresh.fallback_active = fresh.fallback_backlog.is_some();
        fresh
    }

    /// Undelivered requests with a weak quorum of votes: at least one
    /// honest party saw them, so the timed engine eventually orders them.
    fn backlog(&self) -> BTreeSet<RequestId> {
        let weak = self.cfg.weak_threshold();
        self.known()
            .into_iter()
            .filter(|r| self.store.vote_count(r) >= weak)
            .collect()
    }
}

/// Bernoulli draw shared by every party that evaluates the same inputs.
pub fn coin_flip(
    shared_seed: u64,
    block: BlockNumber,
    admissions: u64,
    stop_probability: f64,
) -> bool {
    if stop_probability >= 1.0 {
        return true;
    }
    let mut h = Sha256::new();
    h.update(b"fairlab/coin/v1");
    h.update(shared_seed.to_be_bytes());
    h.update(block.0.to_be_bytes());
    h.update(admissions.to_be_bytes());
    let digest = h.finalize();
    let x = u64::from_be_bytes(digest[..8].try_into().unwrap());
    let unit = (x >> 11) as f64 / (1u64 << 53) as f64;
    unit < stop_probability
}
