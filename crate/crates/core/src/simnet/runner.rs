use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{
    Action, Behavior, LeaderFault, LeaderPolicy, MessageKind, MessageRef, Scenario, INJECTION_STOP,
};
use super::trace::{Record, RunStats, Trace, TraceHeader, TraceRequest, TRACE_VERSION};
use super::SimError;
use crate::abc::{Chain, SubmitOutcome};
use crate::leaders::{EngineEvent, EngineMode, LeaderState, ProposalMode};
use crate::model::{
    BlockNumber, Catalog, Keyring, PartyId, QuorumConfig, Request, RequestId, SeqNo, Timestamp,
};
use crate::validity::{BlockCertificate, Verifier};
use crate::votes::{IngestOutcome, Vote, VoteStore};

/// Result of one simulation.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub stats: RunStats,
    pub chain: Chain,
}

#[derive(Debug, Clone, Copy)]
struct RawVote {
    voter: u32,
    index: usize,
    ts: u64,
    request: usize,
}

#[derive(Debug, Clone, Copy)]
enum Body {
    Vote(RawVote),
    Relay(usize),
}

#[derive(Debug, Clone)]
struct Message {
    mref: MessageRef,
    body: Body,
}

struct Party {
    behavior: Option<Behavior>,
    fault: Option<LeaderFault>,
    seen: BTreeSet<usize>,
    learning: BTreeSet<usize>,
    clock_last: u64,
    clock_offset: u64,
    /// Requests this party has voted for, per recipient, in sending order.
    streams: Vec<Vec<usize>>,
    held: Vec<usize>,
    engine: LeaderState,
    /// Raw votes delivered to this party, in arrival order.
    inbox: Vec<RawVote>,
}

impl Party {
    fn honest(&self) -> bool {
        self.behavior.is_none()
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    cfg: QuorumConfig,
    keyring: Arc<Keyring>,
    ids: Vec<RequestId>,
    index_of: BTreeMap<RequestId, usize>,
    parties: Vec<Party>,
    chain: Chain,
    pending: BTreeMap<u64, Message>,
    pending_refs: BTreeMap<MessageRef, u64>,
    delivered_refs: BTreeSet<MessageRef>,
    next_id: u64,
    now: u64,
    rng: Option<ChaCha8Rng>,
    records: Vec<Record>,
    stats: RunStats,
    stopped: bool,
}

/// Executes `sc` and returns its trace. Equal scenarios give equal traces.
pub fn run(sc: &Scenario) -> Result<RunOutput, SimError> {
    sc.validate()?;
    let mut sim = Sim::new(sc)?;
    for e in &sc.events {
        sim.now = (sim.now + 1).max(e.step);
        match &e.action {
            Action::See { party, request } => {
                let r = sc.request_index(request).expect("validated");
                sim.see(*party, r);
            }
            Action::Deliver { message } => match sim.pending_refs.get(message).copied() {
                Some(id) => sim.deliver(id),
                None if sim.rng.is_some() && sim.delivered_refs.contains(message) => {}
                None if sim.delivered_refs.contains(message) => {
                    return Err(SimError::AlreadyDelivered {
                        step: e.step,
                        message: message.to_string(),
                    })
                }
                None => {
                    return Err(SimError::UnknownMessage {
                        step: e.step,
                        message: message.to_string(),
                    })
                }
            },
            Action::Flush => sim.flush(),
            Action::Checkpoint { label } => {
                sim.records.push(Record::Checkpoint {
                    step: sim.now,
                    label: label.clone(),
                });
                if label == INJECTION_STOP {
                    sim.mark_stop();
                }
            }
        }
        sim.pump();
        sim.leak();
    }
    sim.now += 1;
    if !sim.stopped {
        sim.mark_stop();
    }
    sim.records.push(Record::Drain { step: sim.now });
    for p in 0..sim.parties.len() {
        sim.release_held(p);
    }
    sim.flush();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, SimError> {
        let cfg = sc.cfg()?;
        let keyring = Arc::new(Keyring::new(sc.key_seed, sc.n));
        let requests: Vec<Request> = sc
            .requests
            .iter()
            .map(|r| Request::new(r.market.clone(), r.label.as_bytes()))
            .collect();
        let ids: Vec<RequestId> = requests.iter().map(|r| r.id).collect();
        let index_of = ids.iter().enumerate().map(|(i, r)| (*r, i)).collect();
        let catalog: Arc<Catalog> = Arc::new(requests.into_iter().collect());
        let parties = (0..sc.n as u32)
            .map(|id| {
                let store = VoteStore::new(
                    cfg,
                    sc.mode.vote_mode(),
                    0,
                    BlockNumber(0),
                    Arc::clone(&keyring),
                );
                let c = sc.behavior(id);
                Party {
                    behavior: c.map(|c| c.behavior.clone()),
                    fault: c.and_then(|c| c.as_leader),
                    seen: BTreeSet::new(),
                    learning: BTreeSet::new(),
                    clock_last: 0,
                    clock_offset: sc.clock.offsets.get(id as usize).copied().unwrap_or(0),
                    streams: vec![Vec::new(); sc.n],
                    held: Vec::new(),
                    engine: LeaderState::new(
                        store,
                        sc.mode,
                        sc.hybrid_params(),
                        Arc::clone(&catalog),
                    ),
                    inbox: Vec::new(),
                }
            })
            .collect();
        let verifier = Verifier::new(cfg, Arc::clone(&keyring), Arc::clone(&catalog), sc.mode);
        let header = TraceHeader {
            version: TRACE_VERSION,
            scenario_digest: sc.digest(),
            n: sc.n,
            t: sc.t,
            mode: sc.mode,
            r_max: sc.r_max,
            key_seed: sc.key_seed,
            corrupt: sc.corrupt.iter().map(|c| c.party).collect(),
            requests: sc
                .requests
                .iter()
                .zip(&ids)
                .map(|(r, id)| TraceRequest {
                    label: r.label.clone(),
                    market: r.market.clone(),
                    id: *id,
                })
                .collect(),
        };
        Ok(Sim {
            sc,
            cfg,
            keyring,
            ids,
            index_of,
            parties,
            chain: Chain::new(verifier),
            pending: BTreeMap::new(),
            pending_refs: BTreeMap::new(),
            delivered_refs: BTreeSet::new(),
            next_id: 0,
            now: 0,
            rng: sc
                .adversary_p
                .map(|_| ChaCha8Rng::seed_from_u64(sc.adversary_seed)),
            records: vec![Record::Header(header)],
            stats: RunStats::default(),
            stopped: false,
        })
    }

    fn label(&self, r: usize) -> String {
        self.sc.requests[r].label.clone()
    }

    fn tick(&mut self, p: usize) -> u64 {
        let party = &mut self.parties[p];
        let wall = party.clock_offset + self.sc.clock.rate * self.now;
        let ts = wall.max(party.clock_last + 1);
        party.clock_last = ts;
        ts
    }

    fn send(&mut self, from: u32, to: u32, body: Body) {
        let (kind, request, ts, index) = match body {
            Body::Vote(v) => (
                MessageKind::Vote,
                v.request,
                Some(v.ts),
                Some(v.index as u64),
            ),
            Body::Relay(r) => (MessageKind::Relay, r, None, None),
        };
        let mut mref = MessageRef {
            kind,
            from,
            to,
            request: self.label(request),
            copy: 0,
        };
        while self.pending_refs.contains_key(&mref) || self.delivered_refs.contains(&mref) {
            mref.copy += 1;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.records.push(Record::Send {
            step: self.now,
            id,
            message: mref.clone(),
            ts,
            index,
        });
        self.pending_refs.insert(mref.clone(), id);
        self.pending.insert(id, Message { mref, body });
    }

    /// Sends one vote to every party, appending to each recipient stream.
    fn broadcast_vote(
        &mut self,
        p: usize,
        r: usize,
        ts: u64,
        recipients: impl Iterator<Item = usize>,
    ) {
        for j in recipients {
            let index = self.parties[p].streams[j].len();
            self.parties[p].streams[j].push(r);
            let v = RawVote {
                voter: p as u32,
                index,
                ts,
                request: r,
            };
            self.send(p as u32, j as u32, Body::Vote(v));
        }
    }

    fn see(&mut self, party: u32, r: usize) {
        let p = party as usize;
        if !self.parties[p].seen.insert(r) {
            return;
        }
        let ts = self.tick(p);
        let honest = self.parties[p].honest();
        self.records.push(Record::See {
            step: self.now,
            party,
            request: self.label(r),
            ts,
            honest,
        });
        let n = self.sc.n;
        match self.parties[p].behavior.clone() {
            None => {
                self.broadcast_vote(p, r, ts, 0..n);
                for j in (0..n).filter(|j| *j != p) {
                    self.send(party, j as u32, Body::Relay(r));
                }
            }
            Some(Behavior::Silent) => {}
            Some(Behavior::Skew { offset }) => {
                let skewed = ts.saturating_add_signed(offset).max(1);
                let skewed = skewed.max(self.parties[p].clock_last);
                self.parties[p].clock_last = skewed;
                self.broadcast_vote(p, r, skewed, 0..n);
            }
            Some(Behavior::Reorder { window }) => {
                self.parties[p].held.push(r);
                if self.parties[p].held.len() >= window {
                    self.release_held(p);
                }
            }
            Some(Behavior::Equivocate) => {
                self.parties[p].held.push(r);
                if self.parties[p].held.len() >= 2 {
                    self.release_held(p);
                }
            }
        }
    }

    /// Emits a corrupt party's held-back votes.
    fn release_held(&mut self, p: usize) {
        let held = std::mem::take(&mut self.parties[p].held);
        if held.is_empty() {
            return;
        }
        let n = self.sc.n;
        match self.parties[p].behavior.clone() {
            Some(Behavior::Reorder { .. }) => {
                for r in held.into_iter().rev() {
                    let ts = self.tick(p);
                    self.broadcast_vote(p, r, ts, 0..n);
                }
            }
            Some(Behavior::Equivocate) => {
                if held.len() < 2 {
                    let ts = self.tick(p);
                    self.broadcast_vote(p, held[0], ts, 0..n);
                    return;
                }
                let (a, b) = (held[0], held[1]);
                let (t1, t2) = (self.tick(p), self.tick(p));
                self.broadcast_vote(p, a, t1, (0..n).step_by(2));
                self.broadcast_vote(p, b, t2, (0..n).step_by(2));
                self.broadcast_vote(p, b, t1, (1..n).step_by(2));
                self.broadcast_vote(p, a, t2, (1..n).step_by(2));
                // A second vote for the slot party 0 already holds for `a`.
                let index = self.parties[p].streams[0].len() - 2;
                let v = RawVote {
                    voter: p as u32,
                    index,
                    ts: t1,
                    request: b,
                };
                self.send(p as u32, 0, Body::Vote(v));
            }
            _ => {}
        }
    }

    fn deliver(&mut self, id: u64) {
        let Some(msg) = self.pending.remove(&id) else {
            return;
        };
        self.pending_refs.remove(&msg.mref);
        self.delivered_refs.insert(msg.mref.clone());
        self.stats.messages += 1;
        self.records.push(Record::Deliver { step: self.now, id });
        let to = msg.mref.to;
        match msg.body {
            Body::Relay(r) => {
                self.parties[to as usize].learning.remove(&r);
                self.see(to, r);
            }
            Body::Vote(v) => {
                self.parties[to as usize].inbox.push(v);
                self.ingest(to as usize, v);
                let party = &mut self.parties[to as usize];
                if party.honest()
                    && !party.seen.contains(&v.request)
                    && party.learning.insert(v.request)
                {
                    self.send(to, to, Body::Relay(v.request));
                }
            }
        }
    }

    /// Turns a raw vote into a signed vote for the recipient's current block:
    /// the sequence number is the vote's rank among the voter's undelivered
    /// stream entries to this recipient.
    fn ingest(&mut self, to: usize, v: RawVote) {
        let delivered = self.chain.delivered();
        if delivered.contains(&self.ids[v.request]) {
            return;
        }
        let stream = &self.parties[v.voter as usize].streams[to];
        let seq = stream[..v.index]
            .iter()
            .filter(|r| !delivered.contains(&self.ids[**r]))
            .count() as u64;
        let engine = &mut self.parties[to].engine;
        let ts = match self.sc.mode {
            EngineMode::Neverending => None,
            EngineMode::Clocked | EngineMode::Hybrid => Some(Timestamp(v.ts)),
        };
        let vote = Vote::sign(
            &self.keyring.signer(PartyId(v.voter)),
            0,
            engine.block(),
            SeqNo(seq),
            ts,
            self.ids[v.request],
        );
        let outcome = engine.store_mut().ingest_vote(vote);
        if !matches!(
            outcome,
            IngestOutcome::Rejected(crate::votes::RejectReason::Duplicate)
        ) {
            self.records.push(Record::Ingest {
                step: self.now,
                leader: to as u32,
                voter: v.voter,
                request: self.sc.requests[v.request].label.clone(),
                seq,
                outcome: format!("{outcome:?}").to_lowercase(),
            });
        }
    }

    /// Delivers every pending message, oldest first, until none is left.
    fn flush(&mut self) {
        while let Some((&id, _)) = self.pending.iter().next() {
            self.now += 1;
            self.deliver(id);
            self.pump();
        }
    }

    /// Probabilistic adversary failure: each pending honest message leaks
    /// with probability p, in a seeded random order.
    fn leak(&mut self) {
        let (Some(p), Some(rng)) = (self.sc.adversary_p, self.rng.as_mut()) else {
            return;
        };
        let mut ids: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, m)| !self.sc.is_corrupt(m.mref.from))
            .map(|(id, _)| *id)
            .collect();
        ids.shuffle(rng);
        let chosen: Vec<u64> = ids.into_iter().filter(|_| rng.gen_bool(p)).collect();
        for id in chosen {
            self.now += 1;
            self.deliver(id);
            self.pump();
        }
    }

    fn scheduled(&self, block: BlockNumber) -> u32 {
        (block.0 % self.sc.n as u64) as u32
    }

    /// Parties whose engines may submit for the current height.
    fn submitters(&self) -> Vec<usize> {
        let block = self.chain.next_block();
        let candidates: Vec<usize> = match self.sc.leaders {
            LeaderPolicy::RoundRobin => vec![self.scheduled(block) as usize],
            LeaderPolicy::Parallel => (0..self.sc.n).collect(),
        };
        candidates
            .into_iter()
            .filter(|p| self.parties[*p].fault != Some(LeaderFault::Silent))
            .collect()
    }

    /// Steps the submitting engines and feeds their proposals to the chain
    /// until no new block is accepted.
    fn pump(&mut self) {
        loop {
            let mut accepted = false;
            for p in self.submitters() {
                let proposals = self.parties[p].engine.step();
                self.note_engine(p);
                for prop in proposals {
                    self.records.push(Record::Proposal {
                        step: self.now,
                        leader: p as u32,
                        block: prop.block.0,
                        mode: prop.mode,
                        requests: prop
                            .requests
                            .iter()
                            .map(|r| self.label(self.index_of[r]))
                            .collect(),
                    });
                    let cert = BlockCertificate::from_proposal(&prop);
                    let mut certs = vec![cert.clone()];
                    if self.parties[p].fault == Some(LeaderFault::Equivocate)
                        && cert.requests.len() > 1
                    {
                        let mut variant = cert;
                        variant.requests.reverse();
                        certs.push(variant);
                    }
                    for cert in certs {
                        let outcome = self.chain.submit(PartyId(p as u32), cert.clone());
                        self.records.push(Record::Submit {
                            step: self.now,
                            leader: p as u32,
                            block: cert.block.0,
                            outcome: outcome.to_string(),
                        });
                        match outcome {
                            SubmitOutcome::Accepted => {
                                self.record_block(p as u32, &cert);
                                accepted = true;
                            }
                            SubmitOutcome::EquivocationDetected(_) => self.stats.equivocations += 1,
                            SubmitOutcome::Rejected(_) => {}
                        }
                    }
                }
                if accepted {
                    break;
                }
            }
            if !accepted {
                return;
            }
            self.advance();
        }
    }

    fn note_engine(&mut self, p: usize) {
        let events = self.parties[p].engine.take_events();
        for event in events {
            match &event {
                EngineEvent::FallbackEntered { .. } => self.stats.fallback_activations += 1,
                EngineEvent::Grew { order } => {
                    self.stats.max_order = self.stats.max_order.max(*order);
                    if !self.stopped {
                        self.stats.max_order_before_stop =
                            self.stats.max_order_before_stop.max(*order);
                    }
                }
                _ => {}
            }
            self.records.push(Record::Engine {
                step: self.now,
                leader: p as u32,
                event,
            });
        }
    }

    fn record_block(&mut self, proposer: u32, cert: &BlockCertificate) {
        if self.stats.first_block_step.is_none() {
            self.stats.first_block_step = Some(self.now);
        }
        self.records.push(Record::Block {
            step: self.now,
            number: cert.block.0,
            proposer,
            mode: cert.mode,
            pivot: cert.pivot.map(|p| self.label(self.index_of[&p.request])),
            median: cert.pivot.map(|p| p.median.0),
            requests: cert
                .requests
                .iter()
                .map(|r| self.label(self.index_of[r]))
                .collect(),
            post_cutoff: cert.mode == ProposalMode::TimedFair && self.sc.mode == EngineMode::Hybrid,
        });
    }

    /// Moves every engine to the next height and re-feeds raw votes that were
    /// still buffered.
    fn advance(&mut self) {
        let mut engines: Vec<LeaderState> = self.parties.iter().map(|p| p.engine.clone()).collect();
        self.chain.on_deliver(&mut engines);
        for (p, e) in engines.into_iter().enumerate() {
            self.parties[p].engine = e;
        }
        for p in 0..self.parties.len() {
            let inbox = self.parties[p].inbox.clone();
            for v in inbox {
                self.ingest(p, v);
            }
        }
    }

    fn honest_seen(&self) -> BTreeSet<usize> {
        self.parties
            .iter()
            .filter(|p| p.honest())
            .flat_map(|p| p.seen.iter().copied())
            .collect()
    }

    fn undelivered_seen(&self) -> usize {
        let delivered = self.chain.delivered();
        self.honest_seen()
            .into_iter()
            .filter(|r| !delivered.contains(&self.ids[*r]))
            .count()
    }

    fn mark_stop(&mut self) {
        self.stopped = true;
        self.stats.stop_step = self.now;
        self.stats.blocks_before_stop = self.chain.blocks().len();
        self.stats.pending_at_stop = self.undelivered_seen();
    }

    fn finish(mut self) -> RunOutput {
        self.stats.steps = self.now;
        self.stats.blocks = self.chain.blocks().len();
        self.stats.delivered = self.chain.delivered().len();
        self.stats.pending = self.undelivered_seen();
        let _ = self.cfg;
        self.records.push(Record::End(self.stats.clone()));
        let mut records = self.records;
        let Record::Header(header) = records.remove(0) else {
            unreachable!("header is pushed first")
        };
        RunOutput {
            trace: Trace { header, records },
            stats: self.stats,
            chain: self.chain,
        }
    }
}
