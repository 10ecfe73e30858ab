use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scenario::MessageRef;
use super::SimError;
use crate::leaders::{EngineEvent, EngineMode, ProposalMode};
use crate::model::{MarketId, RequestId};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRequest {
    pub label: String,
    pub market: MarketId,
    pub id: RequestId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub scenario_digest: String,
    pub n: usize,
    pub t: usize,
    pub mode: EngineMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<usize>,
    pub key_seed: u64,
    pub corrupt: Vec<u32>,
    pub requests: Vec<TraceRequest>,
}

/// Run statistics, also written as the last trace line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub blocks: usize,
    /// Blocks accepted before the injection-stop checkpoint (or before the
    /// final drain when the schedule has none).
    pub blocks_before_stop: usize,
    pub stop_step: u64,
    pub first_block_step: Option<u64>,
    pub delivered: usize,
    /// Requests seen by some honest party but undelivered at the stop.
    pub pending_at_stop: usize,
    /// Requests seen by some honest party but undelivered at the end.
    pub pending: usize,
    pub max_order: usize,
    pub max_order_before_stop: usize,
    pub fallback_activations: usize,
    pub equivocations: usize,
    pub messages: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Record {
    Header(TraceHeader),
    /// `party` locally saw `request` at local time `ts`.
    See {
        step: u64,
        party: u32,
        request: String,
        ts: u64,
        honest: bool,
    },
    Send {
        step: u64,
        id: u64,
        message: MessageRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ts: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        index: Option<u64>,
    },
    Deliver {
        step: u64,
        id: u64,
    },
    Ingest {
        step: u64,
        leader: u32,
        voter: u32,
        request: String,
        seq: u64,
        outcome: String,
    },
    Engine {
        step: u64,
        leader: u32,
        event: EngineEvent,
    },
    Proposal {
        step: u64,
        leader: u32,
        block: u64,
        mode: ProposalMode,
        requests: Vec<String>,
    },
    Submit {
        step: u64,
        leader: u32,
        block: u64,
        outcome: String,
    },
    Block {
        step: u64,
        number: u64,
        proposer: u32,
        mode: ProposalMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pivot: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        median: Option<u64>,
        requests: Vec<String>,
        /// Emitted by the timed fallback, after the block-fair cutoff.
        post_cutoff: bool,
    },
    Checkpoint {
        step: u64,
        label: String,
    },
    Drain {
        step: u64,
    },
    End(RunStats),
}

/// Everything a run produced, one record per line when written out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<Record>,
}

/// Global sighting window of one request over honest parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SightingWindow {
    pub first_step: u64,
    pub last_step: u64,
    pub honest_sightings: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceBlock {
    pub number: u64,
    pub step: u64,
    pub mode: ProposalMode,
    pub requests: Vec<String>,
    pub post_cutoff: bool,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out =
            serde_json::to_string(&Record::Header(self.header.clone())).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SimError> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| SimError::Trace(format!("line {}: {e}", i + 1)))?;
            match rec {
                Record::Header(h) if header.is_none() && records.is_empty() => header = Some(h),
                Record::Header(_) => {
                    return Err(SimError::Trace(format!("line {}: second header", i + 1)))
                }
                other if header.is_some() => records.push(other),
                _ => return Err(SimError::Trace("first line must be the header".into())),
            }
        }
        let header = header.ok_or_else(|| SimError::Trace("empty trace".into()))?;
        if header.version != TRACE_VERSION {
            return Err(SimError::Trace(format!(
                "unsupported trace version {}",
                header.version
            )));
        }
        Ok(Trace { header, records })
    }

    pub fn is_honest(&self, party: u32) -> bool {
        !self.header.corrupt.contains(&party)
    }

    pub fn honest_parties(&self) -> Vec<u32> {
        (0..self.header.n as u32)
            .filter(|p| self.is_honest(*p))
            .collect()
    }

    pub fn market_of(&self, label: &str) -> Option<&MarketId> {
        self.header
            .requests
            .iter()
            .find(|r| r.label == label)
            .map(|r| &r.market)
    }

    /// Honest sightings as (step, party, request, local ts), in trace order.
    pub fn honest_sightings(&self) -> impl Iterator<Item = (u64, u32, &str, u64)> {
        self.records.iter().filter_map(|r| match r {
            Record::See {
                step,
                party,
                request,
                ts,
                honest: true,
            } => Some((*step, *party, request.as_str(), *ts)),
            _ => None,
        })
    }

    pub fn sighting_windows(&self) -> BTreeMap<String, SightingWindow> {
        let mut out: BTreeMap<String, SightingWindow> = BTreeMap::new();
        for (step, _, r, _) in self.honest_sightings() {
            out.entry(r.to_string())
                .and_modify(|w| {
                    w.first_step = w.first_step.min(step);
                    w.last_step = w.last_step.max(step);
                    w.honest_sightings += 1;
                })
                .or_insert(SightingWindow {
                    first_step: step,
                    last_step: step,
                    honest_sightings: 1,
                });
        }
        out
    }

    pub fn blocks(&self) -> Vec<TraceBlock> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Block {
                    step,
                    number,
                    mode,
                    requests,
                    post_cutoff,
                    ..
                } => Some(TraceBlock {
                    number: *number,
                    step: *step,
                    mode: *mode,
                    requests: requests.clone(),
                    post_cutoff: *post_cutoff,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn stats(&self) -> Option<&RunStats> {
        self.records.iter().rev().find_map(|r| match r {
            Record::End(s) => Some(s),
            _ => None,
        })
    }
}
