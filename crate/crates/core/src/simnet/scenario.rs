use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::leaders::{EngineMode, HybridParams, StopRule};
use crate::model::{MarketId, QuorumConfig};

/// A complete, replayable simulation input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub t: usize,
    pub mode: EngineMode,
    /// Hybrid cutoff; absent means no cutoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<usize>,
    #[serde(default = "default_stop")]
    pub stop: StopRule,
    #[serde(default)]
    pub key_seed: u64,
    #[serde(default)]
    pub leaders: LeaderPolicy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corrupt: Vec<CorruptParty>,
    #[serde(default)]
    pub clock: ClockModel,
    /// Probability with which every pending honest message leaks after each
    /// adversary step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary_p: Option<f64>,
    #[serde(default)]
    pub adversary_seed: u64,
    /// Where the scenario came from, for humans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    pub requests: Vec<RequestSpec>,
    #[serde(default)]
    pub events: Vec<ScheduleEvent>,
}

fn default_stop() -> StopRule {
    StopRule::Threshold
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub label: String,
    #[serde(default)]
    pub market: MarketId,
}

impl RequestSpec {
    pub fn new(label: impl Into<String>) -> Self {
        RequestSpec {
            label: label.into(),
            market: MarketId::default(),
        }
    }
}

/// Which engines may submit to the chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeaderPolicy {
    /// Only the party scheduled for the block number (block mod n) submits.
    #[default]
    RoundRobin,
    /// Every party's engine submits; the first valid certificate wins.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptParty {
    pub party: u32,
    pub behavior: Behavior,
    /// Misbehavior when this party is a submitting leader.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_leader: Option<LeaderFault>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Behavior {
    /// Sees requests but never votes or relays.
    Silent,
    /// Votes in batches of `window` sightings, each batch in reverse order,
    /// stamping fresh increasing timestamps.
    Reorder { window: usize },
    /// Sends pairwise-swapped orders to odd-numbered recipients and a
    /// conflicting vote to party 0.
    Equivocate,
    /// Honest order, timestamps shifted by `offset`.
    Skew { offset: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeaderFault {
    Silent,
    Equivocate,
}

/// Per-party local clocks: `ts = max(last + 1, offset + rate * step)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockModel {
    #[serde(default = "one")]
    pub rate: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets: Vec<u64>,
}

fn one() -> u64 {
    1
}

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel {
            rate: 1,
            offsets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Vote,
    Relay,
}

/// Structural message address. Honest parties send at most one message per
/// (kind, from, to, request); `copy` tells a corrupt party's duplicates apart.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRef {
    pub kind: MessageKind,
    pub from: u32,
    pub to: u32,
    pub request: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub copy: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl fmt::Display for MessageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MessageKind::Vote => "vote",
            MessageKind::Relay => "relay",
        };
        write!(f, "{kind} p{}->p{} {}", self.from, self.to, self.request)?;
        if self.copy > 0 {
            write!(f, " #{}", self.copy)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub step: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Action {
    /// `party` locally sees `request`.
    See { party: u32, request: String },
    /// Deliver one pending message.
    Deliver { message: MessageRef },
    /// Deliver every pending message, including ones sent meanwhile.
    Flush,
    /// A labelled point in the schedule; `injection-stop` marks the end of
    /// new requests.
    Checkpoint { label: String },
}

pub const INJECTION_STOP: &str = "injection-stop";

impl Scenario {
    pub fn cfg(&self) -> Result<QuorumConfig, SimError> {
        Ok(QuorumConfig::new(self.n, self.t)?)
    }

    pub fn hybrid_params(&self) -> HybridParams {
        HybridParams {
            r_max: self.r_max.unwrap_or(usize::MAX),
            stop: self.stop,
        }
    }

    pub fn is_corrupt(&self, party: u32) -> bool {
        self.corrupt.iter().any(|c| c.party == party)
    }

    pub fn behavior(&self, party: u32) -> Option<&CorruptParty> {
        self.corrupt.iter().find(|c| c.party == party)
    }

    pub fn honest(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.n as u32).filter(|p| !self.is_corrupt(*p))
    }

    pub fn request_index(&self, label: &str) -> Option<usize> {
        self.requests.iter().position(|r| r.label == label)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let cfg = self.cfg()?;
        let bad = |msg: String| Err(SimError::Scenario(msg));
        let parties: BTreeSet<u32> = self.corrupt.iter().map(|c| c.party).collect();
        if parties.len() != self.corrupt.len() {
            return bad("a party is listed as corrupt twice".into());
        }
        if parties.len() > cfg.t() {
            return bad(format!(
                "{} corrupt parties exceed t = {}",
                parties.len(),
                cfg.t()
            ));
        }
        if let Some(p) = parties.iter().find(|p| **p as usize >= self.n) {
            return bad(format!("corrupt party {p} out of range"));
        }
        if self
            .corrupt
            .iter()
            .any(|c| matches!(c.behavior, Behavior::Reorder { window: 0 }))
        {
            return bad("reorder window must be positive".into());
        }
        let labels: BTreeSet<&str> = self.requests.iter().map(|r| r.label.as_str()).collect();
        if labels.len() != self.requests.len() {
            return bad("duplicate request label".into());
        }
        if let Some(p) = self.adversary_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("adversary_p {p} outside (0, 1]"));
            }
        }
        if !self.clock.offsets.is_empty() && self.clock.offsets.len() != self.n {
            return bad("clock offsets must list every party".into());
        }
        if self.clock.rate == 0 {
            return bad("clock rate must be positive".into());
        }
        let mut last = 0;
        for e in &self.events {
            if e.step <= last {
                return Err(SimError::StepOrder { step: e.step });
            }
            last = e.step;
            match &e.action {
                Action::See { party, request } => {
                    if *party as usize >= self.n {
                        return bad(format!("step {}: party {party} out of range", e.step));
                    }
                    if !labels.contains(request.as_str()) {
                        return bad(format!("step {}: unknown request `{request}`", e.step));
                    }
                }
                Action::Deliver { message } => {
                    if message.from as usize >= self.n || message.to as usize >= self.n {
                        return bad(format!("step {}: party out of range", e.step));
                    }
                    if !labels.contains(message.request.as_str()) {
                        return bad(format!(
                            "step {}: unknown request `{}`",
                            e.step, message.request
                        ));
                    }
                }
                Action::Flush | Action::Checkpoint { .. } => {}
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }
}
