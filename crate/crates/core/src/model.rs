//! Shared vocabulary: parties, requests, timestamps, quorum arithmetic and the
//! simulated attestation scheme.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unsound resilience: n = {n} is below 3t + 1 = {}", 3 * .t + 1)]
    Unsound { n: usize, t: usize },
    #[error("a committee needs at least one party")]
    Empty,
}

/// Committee size and the number of byzantine parties tolerated.
///
/// The only way to obtain one is [`QuorumConfig::new`], which enforces
/// `n >= 3t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawQuorum", into = "RawQuorum")]
pub struct QuorumConfig {
    n: usize,
    t: usize,
}

#[derive(Serialize, Deserialize)]
struct RawQuorum {
    n: usize,
    t: usize,
}

impl TryFrom<RawQuorum> for QuorumConfig {
    type Error = ConfigError;
    fn try_from(raw: RawQuorum) -> Result<Self, ConfigError> {
        QuorumConfig::new(raw.n, raw.t)
    }
}

impl From<QuorumConfig> for RawQuorum {
    fn from(cfg: QuorumConfig) -> Self {
        RawQuorum { n: cfg.n, t: cfg.t }
    }
}

impl QuorumConfig {
    pub fn new(n: usize, t: usize) -> Result<Self, ConfigError> {
        if n == 0 {
            return Err(ConfigError::Empty);
        }
        if n < 3 * t + 1 {
            return Err(ConfigError::Unsound { n, t });
        }
        Ok(QuorumConfig { n, t })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Any `t + 1` parties: at least one of them is honest.
    pub fn weak_quorum(&self, k: usize) -> bool {
        k > self.t
    }

    /// Any `n - t` parties: the most one can wait for.
    pub fn strong_quorum(&self, k: usize) -> bool {
        k >= self.n - self.t
    }

    pub fn weak_threshold(&self) -> usize {
        self.t + 1
    }

    pub fn strong_threshold(&self) -> usize {
        self.n - self.t
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> {
        (0..self.n as u32).map(PartyId)
    }
}

/// Validates `(n, t)` and returns the config.
pub fn validate_config(n: usize, t: usize) -> Result<QuorumConfig, ConfigError> {
    QuorumConfig::new(n, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub u32);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarketId(pub String);

impl MarketId {
    pub fn new(label: impl Into<String>) -> Self {
        MarketId(label.into())
    }
}

impl Default for MarketId {
    fn default() -> Self {
        MarketId("default".into())
    }
}

impl fmt::Display for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Content digest of a request. Equal digests mean equal requests.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestId(pub [u8; 32]);

impl RequestId {
    pub fn of(market: &MarketId, payload: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(b"fairlab/request/v1");
        h.update((market.0.len() as u64).to_be_bytes());
        h.update(market.0.as_bytes());
        h.update((payload.len() as u64).to_be_bytes());
        h.update(payload);
        RequestId(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(RequestId(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RequestId({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex()[..12])
    }
}

impl Serialize for RequestId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for RequestId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        RequestId::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad request id"))
    }
}

/// A client transaction tagged with the market it trades on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub market: MarketId,
    pub payload: Vec<u8>,
}

impl Request {
    pub fn new(market: MarketId, payload: impl Into<Vec<u8>>) -> Self {
        let payload = payload.into();
        Request {
            id: RequestId::of(&market, &payload),
            market,
            payload,
        }
    }

    /// Payload rendered as text when it is valid UTF-8; generators use short labels.
    pub fn label(&self) -> String {
        String::from_utf8(self.payload.clone()).unwrap_or_else(|_| hex::encode(&self.payload))
    }
}

/// Request lookup by id: the market labels fairness decisions need, plus
/// payloads for display.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    requests: std::collections::BTreeMap<RequestId, Request>,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    pub fn insert(&mut self, req: Request) {
        self.requests.insert(req.id, req);
    }

    pub fn get(&self, id: &RequestId) -> Option<&Request> {
        self.requests.get(id)
    }

    pub fn market(&self, id: &RequestId) -> Option<&MarketId> {
        self.requests.get(id).map(|r| &r.market)
    }

    /// Unknown ids are treated as not sharing a market with anything.
    pub fn same_market(&self, a: &RequestId, b: &RequestId) -> bool {
        matches!((self.market(a), self.market(b)), (Some(x), Some(y)) if x == y)
    }

    pub fn label(&self, id: &RequestId) -> String {
        self.get(id).map_or_else(|| id.to_string(), Request::label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Request> {
        self.requests.values()
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

impl FromIterator<Request> for Catalog {
    fn from_iter<I: IntoIterator<Item = Request>>(iter: I) -> Self {
        let mut c = Catalog::new();
        for r in iter {
            c.insert(r);
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeqNo(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockNumber(pub u64);

/// A simulated signature. It verifies against a [`Keyring`] only if the
/// matching [`Signer`] produced it over the same content.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attestation {
    pub signer: PartyId,
    #[serde(with = "hex_array")]
    pub tag: [u8; 32],
}

impl fmt::Debug for Attestation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Attestation({}, {})",
            self.signer,
            &hex::encode(self.tag)[..8]
        )
    }
}

mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

/// The simulated PKI. Secrets are derived from a seed so that traces and
/// exported chains can be re-verified offline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyring {
    key_seed: u64,
    secrets: Vec<[u8; 32]>,
}

impl Keyring {
    pub fn new(key_seed: u64, n: usize) -> Self {
        let secrets = (0..n as u32)
            .map(|p| {
                let mut h = Sha256::new();
                h.update(b"fairlab/key/v1");
                h.update(key_seed.to_be_bytes());
                h.update(p.to_be_bytes());
                h.finalize().into()
            })
            .collect();
        Keyring { key_seed, secrets }
    }

    pub fn key_seed(&self) -> u64 {
        self.key_seed
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    /// Hands out the signing capability of one party. Byzantine parties in
    /// the simulator only ever receive their own signer.
    pub fn signer(&self, party: PartyId) -> Signer {
        Signer {
            party,
            secret: self.secrets[party.index()],
        }
    }

    pub fn verify(&self, att: &Attestation, content: &[u8]) -> bool {
        match self.secrets.get(att.signer.index()) {
            Some(secret) => tag(secret, content) == att.tag,
            None => false,
        }
    }
}

#[derive(Clone)]
pub struct Signer {
    party: PartyId,
    secret: [u8; 32],
}

impl fmt::Debug for Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signer({})", self.party)
    }
}

impl Signer {
    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn sign(&self, content: &[u8]) -> Attestation {
        Attestation {
            signer: self.party,
            tag: tag(&self.secret, content),
        }
    }
}

fn tag(secret: &[u8; 32], content: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"fairlab/att/v1");
    h.update(secret);
    h.update((content.len() as u64).to_be_bytes());
    h.update(content);
    h.finalize().into()
}
