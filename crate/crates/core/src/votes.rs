//! Per-party vote streams and the leader-side validated vote store.
//!
//! A vote is accepted only once every lower sequence number from the same
//! voter has been accepted; later votes wait in a per-party buffer. In
//! timestamped mode a voter whose sequence numbers and timestamps disagree is
//! cut off for good, as is any voter caught signing two different votes for
//! one slot.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Reader, Writer};
use crate::model::{
    Attestation, BlockNumber, Keyring, PartyId, QuorumConfig, RequestId, SeqNo, Signer, Timestamp,
};

/// "I saw `request` as my `seq`-th request (at local time `ts`)".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vote {
    pub instance: u64,
    pub block: BlockNumber,
    pub seq: SeqNo,
    pub ts: Option<Timestamp>,
    pub request: RequestId,
    pub att: Attestation,
}

impl Vote {
    pub fn sign(
        signer: &Signer,
        instance: u64,
        block: BlockNumber,
        seq: SeqNo,
        ts: Option<Timestamp>,
        request: RequestId,
    ) -> Vote {
        let content = content_bytes(signer.party(), instance, block, seq, ts, &request);
        Vote {
            instance,
            block,
            seq,
            ts,
            request,
            att: signer.sign(&content),
        }
    }

    pub fn voter(&self) -> PartyId {
        self.att.signer
    }

    /// The bytes the attestation covers.
    pub fn content(&self) -> Vec<u8> {
        content_bytes(
            self.voter(),
            self.instance,
            self.block,
            self.seq,
            self.ts,
            &self.request,
        )
    }

    pub fn verify(&self, keyring: &Keyring) -> bool {
        keyring.verify(&self.att, &self.content())
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u64(self.instance)
            .u64(self.block.0)
            .party(self.voter())
            .u64(self.seq.0)
            .opt_u64(self.ts.map(|t| t.0))
            .request(&self.request)
            .raw(&self.att.tag);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Vote, DecodeError> {
        let instance = r.u64()?;
        let block = BlockNumber(r.u64()?);
        let signer = r.party()?;
        let seq = SeqNo(r.u64()?);
        let ts = r.opt_u64()?.map(Timestamp);
        let request = r.request()?;
        let tag = r.array32()?;
        Ok(Vote {
            instance,
            block,
            seq,
            ts,
            request,
            att: Attestation { signer, tag },
        })
    }
}

fn content_bytes(
    voter: PartyId,
    instance: u64,
    block: BlockNumber,
    seq: SeqNo,
    ts: Option<Timestamp>,
    request: &RequestId,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("fairlab/vote/v1")
        .u64(instance)
        .u64(block.0)
        .party(voter)
        .u64(seq.0)
        .opt_u64(ts.map(|t| t.0))
        .request(request);
    w.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteMode {
    Plain,
    Timestamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartyStatus {
    Active,
    PermanentlyInvalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BadAttestation,
    Equivocation,
    TimestampOrder,
    PartyInvalid,
    /// Wrong protocol instance or incarnation, or a timestamp missing/present
    /// contrary to the store mode.
    Malformed,
    /// The identical vote was already ingested.
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted,
    Buffered,
    Rejected(RejectReason),
}

/// Answer to "has this party reported `r` before `r2`?".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Report {
    Yes,
    No,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct PartyVoteLog {
    pub party: PartyId,
    accepted: Vec<Vote>,
    pending: BTreeMap<SeqNo, Vote>,
    status: PartyStatus,
}

impl PartyVoteLog {
    fn new(party: PartyId) -> Self {
        PartyVoteLog {
            party,
            accepted: Vec::new(),
            pending: BTreeMap::new(),
            status: PartyStatus::Active,
        }
    }

    pub fn accepted(&self) -> &[Vote] {
        &self.accepted
    }

    pub fn pending(&self) -> impl Iterator<Item = &Vote> {
        self.pending.values()
    }

    pub fn status(&self) -> PartyStatus {
        self.status
    }

    pub fn is_active(&self) -> bool {
        self.status == PartyStatus::Active
    }
}

/// Where a party's accepted vote for a request sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteRef {
    pub seq: SeqNo,
    pub ts: Option<Timestamp>,
    /// Position of the acceptance in the store's global acceptance order.
    pub accepted_at: u64,
}

#[derive(Debug, Clone)]
pub struct VoteStore {
    cfg: QuorumConfig,
    mode: VoteMode,
    instance: u64,
    block: BlockNumber,
    keyring: Arc<Keyring>,
    logs: Vec<PartyVoteLog>,
    index: BTreeMap<RequestId, BTreeMap<PartyId, VoteRef>>,
    accepted_total: u64,
}

impl VoteStore {
    pub fn new(
        cfg: QuorumConfig,
        mode: VoteMode,
        instance: u64,
        block: BlockNumber,
        keyring: Arc<Keyring>,
    ) -> Self {
        VoteStore {
            cfg,
            mode,
            instance,
            block,
            keyring,
            logs: cfg.parties().map(PartyVoteLog::new).collect(),
            index: BTreeMap::new(),
            accepted_total: 0,
        }
    }

    pub fn cfg(&self) -> QuorumConfig {
        self.cfg
    }

    pub fn mode(&self) -> VoteMode {
        self.mode
    }

    pub fn instance(&self) -> u64 {
        self.instance
    }

    pub fn block(&self) -> BlockNumber {
        self.block
    }

    pub fn keyring(&self) -> &Arc<Keyring> {
        &self.keyring
    }

    pub fn log(&self, party: PartyId) -> &PartyVoteLog {
        &self.logs[party.index()]
    }

    pub fn logs(&self) -> &[PartyVoteLog] {
        &self.logs
    }

    /// Number of votes accepted so far; grows monotonically.
    pub fn accepted_total(&self) -> u64 {
        self.accepted_total
    }

    pub fn ingest_vote(&mut self, v: Vote) -> IngestOutcome {
        let party = v.voter();
        if party.index() >= self.logs.len() || !v.verify(&self.keyring) {
            return IngestOutcome::Rejected(RejectReason::BadAttestation);
        }
        let ts_ok = match self.mode {
            VoteMode::Plain => v.ts.is_none(),
            VoteMode::Timestamped => v.ts.is_some(),
        };
        if v.instance != self.instance || v.block != self.block || !ts_ok {
            return IngestOutcome::Rejected(RejectReason::Malformed);
        }
        let log = &self.logs[party.index()];
        if !log.is_active() {
            return IngestOutcome::Rejected(RejectReason::PartyInvalid);
        }
        let slot = v.seq.0 as usize;
        let existing = if slot < log.accepted.len() {
            Some(&log.accepted[slot])
        } else {
            log.pending.get(&v.seq)
        };
        if let Some(prev) = existing {
            if *prev == v {
                return IngestOutcome::Rejected(RejectReason::Duplicate);
            }
            self.invalidate(party);
            return IngestOutcome::Rejected(RejectReason::Equivocation);
        }
        if slot > log.accepted.len() {
            self.logs[party.index()].pending.insert(v.seq, v);
            return IngestOutcome::Buffered;
        }
        if let Err(reason) = self.accept(v) {
            self.invalidate(party);
            return IngestOutcome::Rejected(reason);
        }
        loop {
            let log = &mut self.logs[party.index()];
            let next = SeqNo(log.accepted.len() as u64);
            let Some(buffered) = log.pending.remove(&next) else {
                break;
            };
            if self.accept(buffered).is_err() {
                self.invalidate(party);
                break;
            }
        }
        IngestOutcome::Accepted
    }

    fn accept(&mut self, v: Vote) -> Result<(), RejectReason> {
        let party = v.voter();
        let log = &self.logs[party.index()];
        debug_assert_eq!(v.seq.0 as usize, log.accepted.len());
        if self
            .index
            .get(&v.request)
            .is_some_and(|m| m.contains_key(&party))
        {
            return Err(RejectReason::Equivocation);
        }
        if self.mode == VoteMode::Timestamped {
            if let (Some(last), Some(ts)) = (log.accepted.last().and_then(|l| l.ts), v.ts) {
                if ts <= last {
                    return Err(RejectReason::TimestampOrder);
                }
            }
        }
        self.index.entry(v.request).or_default().insert(
            party,
            VoteRef {
                seq: v.seq,
                ts: v.ts,
                accepted_at: self.accepted_total,
            },
        );
        self.accepted_total += 1;
        self.logs[party.index()].accepted.push(v);
        Ok(())
    }

    fn invalidate(&mut self, party: PartyId) {
        let log = &mut self.logs[party.index()];
        log.status = PartyStatus::PermanentlyInvalid;
        log.pending.clear();
    }

    /// Marks a party invalid without a triggering vote; used when a store is
    /// rebuilt for a later incarnation.
    pub(crate) fn force_invalid(&mut self, party: PartyId) {
        self.invalidate(party);
    }

    pub fn reported_before(&self, party: PartyId, r: &RequestId, r2: &RequestId) -> Report {
        if !self.logs[party.index()].is_active() {
            return Report::Unknown;
        }
        let Some(first) = self.index.get(r).and_then(|m| m.get(&party)) else {
            return Report::Unknown;
        };
        match self.index.get(r2).and_then(|m| m.get(&party)) {
            Some(second) if first.seq < second.seq => Report::Yes,
            Some(_) => Report::No,
            None => Report::Yes,
        }
    }

    /// Active parties reporting `r` before `r2`.
    pub fn count_before(&self, r: &RequestId, r2: &RequestId) -> usize {
        let Some(voters) = self.index.get(r) else {
            return 0;
        };
        voters
            .keys()
            .filter(|p| self.reported_before(**p, r, r2) == Report::Yes)
            .count()
    }

    /// Every accepted vote for `r`, including those cast before the voter was
    /// invalidated.
    pub fn votes_for(&self, r: &RequestId) -> Vec<(PartyId, SeqNo, Option<Timestamp>)> {
        self.index
            .get(r)
            .map(|m| m.iter().map(|(p, v)| (*p, v.seq, v.ts)).collect())
            .unwrap_or_default()
    }

    pub fn vote_refs(&self, r: &RequestId) -> Option<&BTreeMap<PartyId, VoteRef>> {
        self.index.get(r)
    }

    pub fn vote_count(&self, r: &RequestId) -> usize {
        self.index.get(r).map_or(0, |m| m.len())
    }

    /// Acceptance position of the `k`-th vote for `r`, if it has `k` votes.
    pub fn quorum_reached_at(&self, r: &RequestId, k: usize) -> Option<u64> {
        if k == 0 {
            return Some(0);
        }
        let mut at: Vec<u64> = self.index.get(r)?.values().map(|v| v.accepted_at).collect();
        if at.len() < k {
            return None;
        }
        at.sort_unstable();
        Some(at[k - 1])
    }

    /// Requests with at least one accepted vote, in id order.
    pub fn known_requests(&self) -> impl Iterator<Item = &RequestId> {
        self.index.keys()
    }

    pub fn timestamps_for(&self, r: &RequestId) -> Vec<Timestamp> {
        self.index
            .get(r)
            .map(|m| m.values().filter_map(|v| v.ts).collect())
            .unwrap_or_default()
    }

    /// All accepted votes, per party in sequence order.
    pub fn accepted_votes(&self) -> impl Iterator<Item = &Vote> {
        self.logs.iter().flat_map(|l| l.accepted.iter())
    }

    /// A fresh store for `block` holding, per party and in original order,
    /// the accepted votes whose requests are not in `drop`, renumbered from
    /// zero and re-signed. Permanently invalid parties stay invalid.
    pub fn replayed(&self, block: BlockNumber, drop: impl Fn(&RequestId) -> bool) -> VoteStore {
        let mut fresh = VoteStore::new(
            self.cfg,
            self.mode,
            self.instance,
            block,
            Arc::clone(&self.keyring),
        );
        for log in &self.logs {
            let signer = self.keyring.signer(log.party);
            let survivors = log.accepted.iter().filter(|v| !drop(&v.request));
            for (seq, v) in survivors.enumerate() {
                let replay = Vote::sign(
                    &signer,
                    self.instance,
                    block,
                    SeqNo(seq as u64),
                    v.ts,
                    v.request,
                );
                let outcome = fresh.ingest_vote(replay);
                debug_assert_eq!(outcome, IngestOutcome::Accepted);
            }
            if !log.is_active() {
                fresh.force_invalid(log.party);
            }
        }
        fresh
    }
}
