//! Small fixtures shared by unit tests.

use std::sync::Arc;

use crate::leaders::{EngineMode, HybridParams, LeaderState, Proposal};
use crate::model::{
    BlockNumber, Catalog, Keyring, MarketId, PartyId, QuorumConfig, Request, RequestId, SeqNo,
    Timestamp,
};
use crate::validity::Verifier;
use crate::votes::{Vote, VoteStore};

/// One leader over n = 4 with single-market requests `m1, m2, ...`.
pub struct Bench {
    pub state: LeaderState,
    pub ring: Arc<Keyring>,
    pub catalog: Arc<Catalog>,
    pub ids: Vec<RequestId>,
    next_seq: Vec<u64>,
}

impl Bench {
    pub fn new(mode: EngineMode, n_requests: usize) -> Self {
        let cfg = QuorumConfig::new(4, 1).unwrap();
        let ring = Arc::new(Keyring::new(5, 4));
        let reqs: Vec<Request> = (0..n_requests)
            .map(|i| Request::new(MarketId::default(), format!("m{}", i + 1)))
            .collect();
        let ids = reqs.iter().map(|r| r.id).collect();
        let catalog: Arc<Catalog> = Arc::new(reqs.into_iter().collect());
        let store = VoteStore::new(cfg, mode.vote_mode(), 0, BlockNumber(0), Arc::clone(&ring));
        Bench {
            state: LeaderState::new(store, mode, HybridParams::default(), Arc::clone(&catalog)),
            ring,
            catalog,
            ids,
            next_seq: vec![0; 4],
        }
    }

    pub fn vote(&mut self, p: u32, req: usize, ts: Option<u64>) {
        let seq = self.next_seq[p as usize];
        self.next_seq[p as usize] += 1;
        let v = self.signed(p, seq, req, ts);
        self.state.store_mut().ingest_vote(v);
    }

    pub fn signed(&self, p: u32, seq: u64, req: usize, ts: Option<u64>) -> Vote {
        Vote::sign(
            &self.ring.signer(PartyId(p)),
            0,
            self.state.block(),
            SeqNo(seq),
            ts.map(Timestamp),
            self.ids[req],
        )
    }

    pub fn step(&mut self) -> Option<Proposal> {
        self.state.step().into_iter().next()
    }

    pub fn verifier(&self) -> Verifier {
        Verifier::new(
            self.state.cfg(),
            Arc::clone(&self.ring),
            Arc::clone(&self.catalog),
            self.state.mode(),
        )
    }
}
