//! Atomic broadcast stub.
//!
//! A single in-memory sequencer standing in for the ordering layer: the first
//! valid certificate for the next height wins, and delivered requests are
//! never scheduled twice.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leaders::{EngineMode, LeaderState, ProposalMode};
use crate::model::{BlockNumber, Catalog, Keyring, PartyId, QuorumConfig, Request, RequestId};
use crate::validity::{BlockCertificate, InvalidReason, Verifier, VerifyOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("invalid certificate: {0}")]
    InvalidCertificate(InvalidReason),
    #[error("wrong block number")]
    WrongBlockNumber,
    #[error("request already delivered")]
    DuplicateRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitOutcome {
    Accepted,
    Rejected(SubmitError),
    EquivocationDetected(PartyId),
}

impl fmt::Display for SubmitOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubmitOutcome::Accepted => f.write_str("accepted"),
            SubmitOutcome::Rejected(e) => write!(f, "rejected ({e})"),
            SubmitOutcome::EquivocationDetected(p) => write!(f, "equivocation by {p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainEntry {
    pub number: BlockNumber,
    pub proposer: PartyId,
    pub cert: BlockCertificate,
}

#[derive(Debug, Clone)]
pub struct Chain {
    verifier: Verifier,
    blocks: Vec<ChainEntry>,
    delivered: BTreeSet<RequestId>,
    /// First valid certificate digest seen per (proposer, height).
    seen: BTreeMap<(PartyId, BlockNumber), Vec<u8>>,
    equivocators: BTreeSet<PartyId>,
}

impl Chain {
    pub fn new(verifier: Verifier) -> Self {
        Chain {
            verifier,
            blocks: Vec::new(),
            delivered: BTreeSet::new(),
            seen: BTreeMap::new(),
            equivocators: BTreeSet::new(),
        }
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    pub fn blocks(&self) -> &[ChainEntry] {
        &self.blocks
    }

    pub fn delivered(&self) -> &BTreeSet<RequestId> {
        &self.delivered
    }

    pub fn equivocators(&self) -> &BTreeSet<PartyId> {
        &self.equivocators
    }

    pub fn next_block(&self) -> BlockNumber {
        BlockNumber(self.blocks.len() as u64)
    }

    pub fn submit(&mut self, proposer: PartyId, cert: BlockCertificate) -> SubmitOutcome {
        if let VerifyOutcome::Invalid(reason) = self.verifier.verify(&cert) {
            return SubmitOutcome::Rejected(SubmitError::InvalidCertificate(reason));
        }
        let bytes = cert.encode();
        match self.seen.get(&(proposer, cert.block)) {
            Some(prev) if *prev != bytes => {
                self.equivocators.insert(proposer);
                return SubmitOutcome::EquivocationDetected(proposer);
            }
            Some(_) => {}
            None => {
                self.seen.insert((proposer, cert.block), bytes);
            }
        }
        if cert.block != self.next_block() {
            return SubmitOutcome::Rejected(SubmitError::WrongBlockNumber);
        }
        if cert.requests.iter().any(|r| self.delivered.contains(r)) {
            return SubmitOutcome::Rejected(SubmitError::DuplicateRequest);
        }
        self.delivered.extend(cert.requests.iter().copied());
        self.blocks.push(ChainEntry {
            number: cert.block,
            proposer,
            cert,
        });
        SubmitOutcome::Accepted
    }

    /// Advances every leader to the next height, dropping votes for
    /// delivered requests.
    pub fn on_deliver(&self, leaders: &mut [LeaderState]) {
        let next = self.next_block();
        let last = self
            .blocks
            .last()
            .map_or(ProposalMode::BlockFair, |b| b.cert.mode);
        for l in leaders.iter_mut() {
            if l.block() < next {
                *l = l.replay_after(&self.delivered, next, last);
            }
        }
    }

    /// Requests in delivery order.
    pub fn ordered_requests(&self) -> impl Iterator<Item = (BlockNumber, &RequestId)> {
        self.blocks
            .iter()
            .flat_map(|b| b.cert.requests.iter().map(move |r| (b.number, r)))
    }

    /// JSON lines: a header with everything a verifier needs, then one line
    /// per block carrying the hex of its canonical certificate encoding.
    pub fn export_jsonl(&self) -> String {
        let header = ChainHeader {
            kind: "chain".into(),
            n: self.verifier.cfg().n(),
            t: self.verifier.cfg().t(),
            key_seed: self.verifier.keyring().key_seed(),
            engine: self.verifier.engine(),
            requests: self.verifier.catalog().iter().cloned().collect(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for b in &self.blocks {
            let line = BlockLine {
                kind: "block".into(),
                number: b.number.0,
                proposer: b.proposer.0,
                certificate: hex::encode(b.cert.encode()),
            };
            out.push_str(&serde_json::to_string(&line).expect("line serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainHeader {
    kind: String,
    n: usize,
    t: usize,
    key_seed: u64,
    engine: EngineMode,
    requests: Vec<Request>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockLine {
    kind: String,
    number: u64,
    proposer: u32,
    certificate: String,
}

#[derive(Debug, Error)]
pub enum ChainFileError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing chain header")]
    MissingHeader,
}

/// Result of re-checking an exported chain from scratch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainAudit {
    pub blocks: usize,
    /// `(block number, reason)` for every entry that fails.
    pub failures: Vec<(u64, String)>,
}

impl ChainAudit {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Re-verifies every certificate in an exported chain and checks that heights
/// are contiguous from zero and no request appears twice.
pub fn verify_export(text: &str) -> Result<ChainAudit, ChainFileError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let parse = |i: usize, e: &dyn fmt::Display| ChainFileError::Parse {
        line: i + 1,
        msg: e.to_string(),
    };
    let (i, first) = lines.next().ok_or(ChainFileError::MissingHeader)?;
    let header: ChainHeader = serde_json::from_str(first).map_err(|e| parse(i, &e))?;
    if header.kind != "chain" {
        return Err(ChainFileError::MissingHeader);
    }
    let cfg = QuorumConfig::new(header.n, header.t).map_err(|e| parse(i, &e))?;
    let verifier = Verifier::new(
        cfg,
        Arc::new(Keyring::new(header.key_seed, header.n)),
        Arc::new(header.requests.into_iter().collect::<Catalog>()),
        header.engine,
    );
    let mut audit = ChainAudit {
        blocks: 0,
        failures: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    for (i, line) in lines {
        let entry: BlockLine = serde_json::from_str(line).map_err(|e| parse(i, &e))?;
        let bytes = hex::decode(&entry.certificate).map_err(|e| parse(i, &e))?;
        let expected = audit.blocks as u64;
        audit.blocks += 1;
        let mut fail = |msg: String| audit.failures.push((entry.number, msg));
        let cert = match BlockCertificate::decode(&bytes) {
            Ok(c) => c,
            Err(e) => {
                fail(format!("undecodable certificate: {e}"));
                continue;
            }
        };
        if entry.number != expected || cert.block.0 != expected {
            fail(format!("expected height {expected}"));
        }
        if let VerifyOutcome::Invalid(reason) = verifier.verify(&cert) {
            fail(reason.to_string());
        }
        if cert.requests.iter().any(|r| !seen.insert(*r)) {
            fail("request delivered twice".into());
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leaders::EngineMode;
    use crate::testkit::Bench;

    fn single(mode: EngineMode) -> (Bench, BlockCertificate) {
        let mut b = Bench::new(mode, 3);
        for p in 0..4 {
            b.vote(p, 0, None);
        }
        let cert = BlockCertificate::from_proposal(&b.step().unwrap());
        (b, cert)
    }

    #[test]
    fn honest_certificate_is_accepted() {
        let (b, cert) = single(EngineMode::Neverending);
        let mut chain = Chain::new(b.verifier());
        assert_eq!(
            chain.submit(PartyId(0), cert.clone()),
            SubmitOutcome::Accepted
        );
        assert_eq!(chain.next_block(), BlockNumber(1));
        assert!(chain.delivered().contains(&b.ids[0]));
        assert_eq!(
            chain.submit(PartyId(1), cert),
            SubmitOutcome::Rejected(SubmitError::WrongBlockNumber)
        );
    }

    #[test]
    fn invalid_certificate_is_rejected() {
        let (b, mut cert) = single(EngineMode::Neverending);
        cert.requests.clear();
        let mut chain = Chain::new(b.verifier());
        assert_eq!(
            chain.submit(PartyId(0), cert),
            SubmitOutcome::Rejected(SubmitError::InvalidCertificate(InvalidReason::EmptyBlock))
        );
        assert!(chain.blocks().is_empty());
    }

    /// Two certificates for the same height with different contents.
    fn rival_certs() -> (Bench, BlockCertificate, BlockCertificate) {
        let mut b = Bench::new(EngineMode::Neverending, 2);
        for p in 0..3 {
            b.vote(p, 0, None);
        }
        let first = BlockCertificate::from_proposal(&b.step().unwrap());
        let mut late = Bench::new(EngineMode::Neverending, 2);
        for p in 0..3 {
            late.vote(p, 1, None);
        }
        let second = BlockCertificate::from_proposal(&late.step().unwrap());
        (b, first, second)
    }

    #[test]
    fn same_height_race_has_one_winner() {
        let (b, first, second) = rival_certs();
        let mut chain = Chain::new(b.verifier());
        let outcomes = [
            chain.submit(PartyId(0), first),
            chain.submit(PartyId(1), second),
        ];
        let accepted = outcomes
            .iter()
            .filter(|o| **o == SubmitOutcome::Accepted)
            .count();
        assert_eq!(accepted, 1);
        assert_eq!(
            outcomes[1],
            SubmitOutcome::Rejected(SubmitError::WrongBlockNumber)
        );
        assert_eq!(chain.blocks()[0].proposer, PartyId(0));
    }

    #[test]
    fn proposer_equivocation_is_flagged() {
        let (b, first, second) = rival_certs();
        let mut chain = Chain::new(b.verifier());
        assert_eq!(chain.submit(PartyId(2), first), SubmitOutcome::Accepted);
        assert_eq!(
            chain.submit(PartyId(2), second),
            SubmitOutcome::EquivocationDetected(PartyId(2))
        );
        assert!(chain.equivocators().contains(&PartyId(2)));
    }

    #[test]
    fn delivery_replays_leaders() {
        let mut b = Bench::new(EngineMode::Neverending, 3);
        for p in 0..4 {
            b.vote(p, 0, None);
            b.vote(p, 1, None);
        }
        let cert = BlockCertificate::from_proposal(&b.step().unwrap());
        assert_eq!(cert.requests, vec![b.ids[0]]);
        let mut chain = Chain::new(b.verifier());
        assert_eq!(chain.submit(PartyId(0), cert), SubmitOutcome::Accepted);
        let mut leaders = vec![b.state.clone()];
        chain.on_deliver(&mut leaders);
        let l = &leaders[0];
        assert_eq!(l.block(), BlockNumber(1));
        assert_eq!(l.store().accepted_total(), 4);
        assert!(l
            .store()
            .accepted_votes()
            .all(|v| v.request == b.ids[1] && v.seq.0 == 0));
    }

    #[test]
    fn export_round_trips_through_verification() {
        let (b, cert) = single(EngineMode::Neverending);
        let mut chain = Chain::new(b.verifier());
        chain.submit(PartyId(0), cert);
        let text = chain.export_jsonl();
        let audit = verify_export(&text).unwrap();
        assert_eq!(audit.blocks, 1);
        assert!(audit.ok());

        let tampered = text.replacen("\"proposer\":0", "\"proposer\":0,\"x\":1", 1);
        assert!(verify_export(&tampered).unwrap().ok());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut line: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        let hex_cert = line["certificate"].as_str().unwrap().to_string();
        let mut bytes = hex::decode(hex_cert).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        line["certificate"] = hex::encode(bytes).into();
        lines[1] = line.to_string();
        let audit = verify_export(&lines.join("\n")).unwrap();
        assert_eq!(audit.failures, vec![(0, "bad-attestation".to_string())]);
        assert!(verify_export("").is_err());
    }
}
