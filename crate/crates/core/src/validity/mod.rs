//! Stand-alone block verifiers.
//!
//! A verifier sees only the certificate plus public context (quorum sizes,
//! the key directory, request metadata and the engine in use). It never
//! consults a leader's private state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::fairness::median_timestamp;
use crate::leaders::{EngineMode, Proposal, ProposalMode, TimedPivot};
use crate::model::{BlockNumber, Catalog, Keyring, PartyId, QuorumConfig, RequestId, Timestamp};
use crate::votes::Vote;

const CERT_MAGIC: &[u8] = b"FLCERT\x01";

/// A proposal together with the votes that justify it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCertificate {
    pub block: BlockNumber,
    pub requests: Vec<RequestId>,
    pub mode: ProposalMode,
    pub pivot: Option<TimedPivot>,
    /// Cited votes, grouped by the request they vote for.
    pub cited: BTreeMap<RequestId, Vec<Vote>>,
}

impl BlockCertificate {
    pub fn from_proposal(p: &Proposal) -> Self {
        let mut cited: BTreeMap<RequestId, Vec<Vote>> = BTreeMap::new();
        for v in &p.justification {
            cited.entry(v.request).or_default().push(v.clone());
        }
        for votes in cited.values_mut() {
            votes.sort_by_key(|v| v.voter());
        }
        BlockCertificate {
            block: p.block,
            requests: p.requests.clone(),
            mode: p.mode,
            pivot: p.pivot,
            cited,
        }
    }

    pub fn votes(&self) -> impl Iterator<Item = &Vote> {
        self.cited.values().flatten()
    }

    /// Layout: magic `FLCERT\x01`, block `u64`, mode `u8` (0 block-fair,
    /// 1 timed-fair), pivot flag `u8` then request and median `u64` when
    /// present, `u32` member count and member ids, `u32` group count, then per
    /// group the request id, a `u32` vote count and the votes in their
    /// canonical encoding.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CERT_MAGIC).u64(self.block.0).u8(match self.mode {
            ProposalMode::BlockFair => 0,
            ProposalMode::TimedFair => 1,
        });
        match &self.pivot {
            None => {
                w.u8(0);
            }
            Some(p) => {
                w.u8(1).request(&p.request).u64(p.median.0);
            }
        }
        w.u32(self.requests.len() as u32);
        for r in &self.requests {
            w.request(r);
        }
        w.u32(self.cited.len() as u32);
        for (r, votes) in &self.cited {
            w.request(r).u32(votes.len() as u32);
            for v in votes {
                v.encode(&mut w);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.expect(CERT_MAGIC)?;
        let block = BlockNumber(r.u64()?);
        let at = r.position();
        let mode = match r.u8()? {
            0 => ProposalMode::BlockFair,
            1 => ProposalMode::TimedFair,
            tag => return Err(DecodeError::BadTag { tag, at }),
        };
        let at = r.position();
        let pivot = match r.u8()? {
            0 => None,
            1 => Some(TimedPivot {
                request: r.request()?,
                median: Timestamp(r.u64()?),
            }),
            tag => return Err(DecodeError::BadTag { tag, at }),
        };
        let n = r.u32()?;
        let requests = (0..n).map(|_| r.request()).collect::<Result<_, _>>()?;
        let groups = r.u32()?;
        let mut cited = BTreeMap::new();
        for _ in 0..groups {
            let id = r.request()?;
            let count = r.u32()?;
            let votes = (0..count)
                .map(|_| Vote::decode(&mut r))
                .collect::<Result<_, _>>()?;
            cited.insert(id, votes);
        }
        r.finish()?;
        Ok(BlockCertificate {
            block,
            requests,
            mode,
            pivot,
            cited,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Error)]
pub enum InvalidReason {
    #[error("empty-block")]
    EmptyBlock,
    #[error("malformed")]
    Malformed,
    #[error("bad-attestation")]
    BadAttestation,
    #[error("insufficient-votes")]
    InsufficientVotes,
    #[error("missing-history")]
    MissingHistory,
    #[error("timestamp-order")]
    TimestampOrder,
    #[error("bad-pivot")]
    BadPivot,
    #[error("unjustified-member")]
    UnjustifiedMember,
    #[error("omitted-blocked-request")]
    OmittedBlockedRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyOutcome {
    Valid,
    Invalid(InvalidReason),
}

impl VerifyOutcome {
    pub fn is_valid(self) -> bool {
        self == VerifyOutcome::Valid
    }
}

impl fmt::Display for VerifyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyOutcome::Valid => f.write_str("valid"),
            VerifyOutcome::Invalid(r) => write!(f, "invalid({r})"),
        }
    }
}

/// Public context a certificate is checked against.
#[derive(Debug, Clone)]
pub struct Verifier {
    cfg: QuorumConfig,
    keyring: Arc<Keyring>,
    catalog: Arc<Catalog>,
    engine: EngineMode,
}

/// Why a voter's valid prefix ended early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cut {
    Gap,
    Timestamp,
}

#[derive(Debug, Default)]
struct History {
    by_seq: BTreeMap<u64, Vote>,
    /// Length of the valid prefix.
    valid: usize,
    cut: Option<Cut>,
    equivocated: bool,
}

impl History {
    fn valid_votes(&self) -> impl Iterator<Item = &Vote> {
        self.by_seq.values().take(self.valid)
    }

    fn valid_vote_for(&self, r: &RequestId) -> Option<&Vote> {
        self.valid_votes().find(|v| v.request == *r)
    }
}

/// Per-voter analysis of a certificate's cited votes.
struct Cited {
    histories: BTreeMap<PartyId, History>,
}

impl Cited {
    fn new(cert: &BlockCertificate, timestamped: bool) -> Self {
        let mut histories: BTreeMap<PartyId, History> = BTreeMap::new();
        for v in cert.votes() {
            let h = histories.entry(v.voter()).or_default();
            match h.by_seq.get(&v.seq.0) {
                Some(prev) if prev != v => h.equivocated = true,
                Some(_) => {}
                None => {
                    h.by_seq.insert(v.seq.0, v.clone());
                }
            }
        }
        for h in histories.values_mut() {
            let distinct: BTreeSet<_> = h.by_seq.values().map(|v| v.request).collect();
            if distinct.len() != h.by_seq.len() {
                h.equivocated = true;
            }
            if h.equivocated {
                continue;
            }
            let mut last: Option<Timestamp> = None;
            for (i, (seq, v)) in h.by_seq.iter().enumerate() {
                if *seq != i as u64 {
                    h.cut = Some(Cut::Gap);
                    break;
                }
                if timestamped {
                    if let (Some(prev), Some(ts)) = (last, v.ts) {
                        if ts <= prev {
                            h.cut = Some(Cut::Timestamp);
                            break;
                        }
                    }
                    last = v.ts;
                }
                h.valid = i + 1;
            }
        }
        Cited { histories }
    }

    fn valid_voters(&self, r: &RequestId) -> usize {
        self.histories
            .values()
            .filter(|h| h.valid_vote_for(r).is_some())
            .count()
    }

    fn valid_timestamps(&self, r: &RequestId) -> Vec<Timestamp> {
        self.histories
            .values()
            .filter_map(|h| h.valid_vote_for(r).and_then(|v| v.ts))
            .collect()
    }

    /// Voters citing a vote for `r` that did not survive the prefix rules.
    fn invalidated_by(&self, r: &RequestId) -> Vec<Cut> {
        self.histories
            .values()
            .filter(|h| !h.equivocated && h.valid_vote_for(r).is_none())
            .filter(|h| h.by_seq.values().any(|v| v.request == *r))
            .filter_map(|h| h.cut)
            .collect()
    }

    /// Voters whose cited history is clean, placing `r` before `r2`.
    fn count_before(&self, r: &RequestId, r2: &RequestId) -> usize {
        self.histories
            .values()
            .filter(|h| !h.equivocated && h.cut != Some(Cut::Timestamp))
            .filter(|h| match (h.valid_vote_for(r), h.valid_vote_for(r2)) {
                (Some(a), Some(b)) => a.seq < b.seq,
                (Some(_), None) => true,
                _ => false,
            })
            .count()
    }
}

impl Verifier {
    pub fn new(
        cfg: QuorumConfig,
        keyring: Arc<Keyring>,
        catalog: Arc<Catalog>,
        engine: EngineMode,
    ) -> Self {
        Verifier {
            cfg,
            keyring,
            catalog,
            engine,
        }
    }

    pub fn cfg(&self) -> QuorumConfig {
        self.cfg
    }

    pub fn engine(&self) -> EngineMode {
        self.engine
    }

    pub fn keyring(&self) -> &Arc<Keyring> {
        &self.keyring
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    /// Valid votes each member needs. The hybrid engine admits requests seen
    /// by a weak quorum, the other engines only with a strong one.
    pub fn member_threshold(&self) -> usize {
        match self.engine {
            EngineMode::Hybrid => self.cfg.weak_threshold(),
            EngineMode::Neverending | EngineMode::Clocked => self.cfg.strong_threshold(),
        }
    }

    /// Checks `cert` with the rules of the engine this verifier was built for.
    pub fn verify(&self, cert: &BlockCertificate) -> VerifyOutcome {
        match self.engine {
            EngineMode::Neverending => self.verify_block(cert),
            EngineMode::Clocked | EngineMode::Hybrid => self.verify_block_timestamped(cert),
        }
    }

    /// Block validity for untimestamped votes.
    pub fn verify_block(&self, cert: &BlockCertificate) -> VerifyOutcome {
        to_outcome(self.check(cert, false))
    }

    /// Block validity for timestamped votes: voters whose timestamps run
    /// against their sequence numbers lose every vote from that point on.
    pub fn verify_block_timestamped(&self, cert: &BlockCertificate) -> VerifyOutcome {
        to_outcome(self.check(cert, true))
    }

    fn check(&self, cert: &BlockCertificate, timestamped: bool) -> Result<(), InvalidReason> {
        use InvalidReason::*;
        if cert.requests.is_empty() {
            return Err(EmptyBlock);
        }
        self.check_structure(cert, timestamped)?;
        if cert.votes().any(|v| !v.verify(&self.keyring)) {
            return Err(BadAttestation);
        }
        let cited = Cited::new(cert, timestamped);
        let need = self.member_threshold();
        for r in &cert.requests {
            let present = cert.cited.get(r).map_or(0, |vs| {
                vs.iter().map(Vote::voter).collect::<BTreeSet<_>>().len()
            });
            if present < need {
                return Err(InsufficientVotes);
            }
        }
        for r in &cert.requests {
            if cited.valid_voters(r) < need {
                let causes = cited.invalidated_by(r);
                return Err(if causes.contains(&Cut::Timestamp) {
                    TimestampOrder
                } else if causes.contains(&Cut::Gap) {
                    MissingHistory
                } else {
                    InsufficientVotes
                });
            }
        }
        match cert.mode {
            ProposalMode::BlockFair => self.check_blocking(cert, &cited),
            ProposalMode::TimedFair => self.check_timed(cert, &cited),
        }
    }

    fn check_structure(
        &self,
        cert: &BlockCertificate,
        timestamped: bool,
    ) -> Result<(), InvalidReason> {
        let members: BTreeSet<_> = cert.requests.iter().collect();
        let mode_ok = matches!(
            (self.engine, cert.mode),
            (EngineMode::Neverending, ProposalMode::BlockFair)
                | (EngineMode::Clocked, ProposalMode::TimedFair)
                | (EngineMode::Hybrid, _)
        );
        let pivot_ok = cert.pivot.is_some() == (cert.mode == ProposalMode::TimedFair);
        let votes_ok = cert.cited.iter().all(|(r, vs)| {
            vs.iter()
                .all(|v| v.request == *r && v.block == cert.block && v.ts.is_some() == timestamped)
        });
        let known = cert
            .cited
            .keys()
            .chain(cert.requests.iter())
            .all(|r| self.catalog.get(r).is_some());
        if members.len() != cert.requests.len() || !mode_ok || !pivot_ok || !votes_ok || !known {
            return Err(InvalidReason::Malformed);
        }
        Ok(())
    }

    /// Every outside request that still blocks a member has to be a member.
    fn check_blocking(&self, cert: &BlockCertificate, cited: &Cited) -> Result<(), InvalidReason> {
        let members: BTreeSet<_> = cert.requests.iter().collect();
        for r in &cert.requests {
            for r2 in cert.cited.keys().filter(|x| !members.contains(x)) {
                if self.catalog.same_market(r, r2)
                    && cited.valid_voters(r2) > 0
                    && !self.cfg.weak_quorum(cited.count_before(r, r2))
                {
                    return Err(InvalidReason::OmittedBlockedRequest);
                }
            }
        }
        Ok(())
    }

    /// The pivot median must be attainable from a strong quorum of the
    /// pivot's votes; members other than the pivot need a weak quorum of
    /// votes below it, and no outside request may have one.
    fn check_timed(&self, cert: &BlockCertificate, cited: &Cited) -> Result<(), InvalidReason> {
        let pivot = cert.pivot.ok_or(InvalidReason::Malformed)?;
        if !cert.requests.contains(&pivot.request)
            || !median_attainable(
                &cited.valid_timestamps(&pivot.request),
                pivot.median,
                self.cfg.strong_threshold(),
            )
        {
            return Err(InvalidReason::BadPivot);
        }
        let below = |r: &RequestId| {
            let n = cited
                .valid_timestamps(r)
                .iter()
                .filter(|t| **t < pivot.median)
                .count();
            self.cfg.weak_quorum(n)
        };
        for r in cert.requests.iter().filter(|r| **r != pivot.request) {
            if !below(r) {
                return Err(InvalidReason::UnjustifiedMember);
            }
        }
        let members: BTreeSet<_> = cert.requests.iter().collect();
        for r2 in cert.cited.keys().filter(|x| !members.contains(x)) {
            if self.catalog.same_market(r2, &pivot.request) && below(r2) {
                return Err(InvalidReason::OmittedBlockedRequest);
            }
        }
        Ok(())
    }
}

/// Whether `m` is the lower median of some `k`-subset of `ts`.
fn median_attainable(ts: &[Timestamp], m: Timestamp, k: usize) -> bool {
    if k == 0 || ts.len() < k {
        return false;
    }
    let mut sorted = ts.to_vec();
    sorted.sort_unstable();
    let lo = (k - 1) / 2;
    let hi = sorted.len() - (k - lo);
    debug_assert_eq!(median_timestamp(&sorted[..k]).ok(), Some(sorted[lo]));
    sorted[lo..=hi].contains(&m)
}

fn to_outcome(r: Result<(), InvalidReason>) -> VerifyOutcome {
    match r {
        Ok(()) => VerifyOutcome::Valid,
        Err(reason) => VerifyOutcome::Invalid(reason),
    }
}
