//! Post-hoc fairness auditor. Works from trace ground truth (who saw what,
//! when) and the blocks the chain accepted, never from protocol state.

mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leaders::EngineMode;
use crate::simnet::{Record, Trace};

pub use oracle::{oracle_constraints, Hypothesis, OracleReport, ORACLE_MAX_REQUESTS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("oracle limited to {limit} requests, trace has {requests}")]
    TooLarge { requests: usize, limit: usize },
}

/// An ordered pair of request labels: `before` must not come after `after`.
pub type Pair = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub before: String,
    pub after: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before_block: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_block: Option<u64>,
    /// Whether the block the violation is attributed to came from the
    /// timed fallback.
    pub post_cutoff: bool,
    pub evidence: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let block = |b: Option<u64>| b.map_or("undelivered".to_string(), |b| format!("block {b}"));
        if self.before == self.after {
            return write!(
                f,
                "{} ({}): {}",
                self.before,
                block(self.before_block),
                self.evidence
            );
        }
        write!(
            f,
            "{} ({}) should not follow {} ({}): {}",
            self.before,
            block(self.before_block),
            self.after,
            block(self.after_block),
            self.evidence
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub holds: bool,
    pub violations: Vec<Violation>,
    /// Pairs or requests that were checked.
    pub constraints: usize,
}

impl Verdict {
    fn from(violations: Vec<Violation>, constraints: usize) -> Self {
        Verdict {
            holds: violations.is_empty(),
            violations,
            constraints,
        }
    }

    /// True when every violation sits in a post-cutoff block.
    pub fn holds_pre_cutoff(&self) -> bool {
        self.violations.iter().all(|v| v.post_cutoff)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub mode: EngineMode,
    pub block_fairness: Verdict,
    pub relative_block_fairness: Verdict,
    pub timed_fairness: Verdict,
    pub absolute_fairness: Verdict,
}

impl FairnessReport {
    /// Name of the check that gates this engine mode.
    pub fn gating_check(&self) -> &'static str {
        match self.mode {
            EngineMode::Neverending => "relative-block-fairness",
            EngineMode::Clocked => "timed-fairness",
            EngineMode::Hybrid => "relative-block-fairness-pre-cutoff",
        }
    }

    pub fn gating_holds(&self) -> bool {
        match self.mode {
            EngineMode::Neverending => self.relative_block_fairness.holds,
            EngineMode::Clocked => self.timed_fairness.holds,
            EngineMode::Hybrid => self.relative_block_fairness.holds_pre_cutoff(),
        }
    }

    pub fn verdicts(&self) -> [(&'static str, &Verdict); 4] {
        [
            ("block-fairness", &self.block_fairness),
            ("relative-block-fairness", &self.relative_block_fairness),
            ("timed-fairness", &self.timed_fairness),
            ("absolute-fairness", &self.absolute_fairness),
        ]
    }
}

impl fmt::Display for FairnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.verdicts() {
            let state = if v.holds { "holds" } else { "VIOLATED" };
            writeln!(
                f,
                "{name:<24} {state:<9} {} checked, {} violations",
                v.constraints,
                v.violations.len()
            )?;
            for viol in &v.violations {
                writeln!(f, "    {viol}")?;
            }
        }
        let gate = if self.gating_holds() { "pass" } else { "FAIL" };
        write!(f, "gating ({}): {gate}", self.gating_check())
    }
}

/// Delivery position of every delivered request: (block, index in block).
pub(crate) struct Placement {
    pos: BTreeMap<String, (u64, usize)>,
    post_cutoff: BTreeMap<u64, bool>,
}

impl Placement {
    pub(crate) fn of(trace: &Trace) -> Self {
        let mut pos = BTreeMap::new();
        let mut post_cutoff = BTreeMap::new();
        for b in trace.blocks() {
            post_cutoff.insert(b.number, b.post_cutoff);
            for (i, r) in b.requests.iter().enumerate() {
                pos.insert(r.clone(), (b.number, i));
            }
        }
        Placement { pos, post_cutoff }
    }

    pub(crate) fn block(&self, r: &str) -> Option<u64> {
        self.pos.get(r).map(|p| p.0)
    }

    pub(crate) fn position(&self, r: &str) -> Option<(u64, usize)> {
        self.pos.get(r).copied()
    }

    fn is_post_cutoff(&self, block: Option<u64>) -> bool {
        block.is_some_and(|b| self.post_cutoff.get(&b).copied().unwrap_or(false))
    }

    /// Block-level check of `before <= after`. A violation is attributed to
    /// the block holding `after`, the one delivered too early.
    pub(crate) fn block_violation(
        &self,
        before: &str,
        after: &str,
        evidence: String,
    ) -> Option<Violation> {
        let (b1, b2) = (self.block(before), self.block(after));
        let broken = match (b1, b2) {
            (Some(x), Some(y)) => x > y,
            (None, Some(_)) => true,
            _ => false,
        };
        broken.then(|| Violation {
            before: before.to_string(),
            after: after.to_string(),
            before_block: b1,
            after_block: b2,
            post_cutoff: self.is_post_cutoff(b2),
            evidence,
        })
    }

    /// Final-order check of `before` strictly preceding `after`.
    pub(crate) fn order_violation(
        &self,
        before: &str,
        after: &str,
        evidence: String,
    ) -> Option<Violation> {
        let (p1, p2) = (self.position(before), self.position(after));
        let broken = match (p1, p2) {
            (Some(x), Some(y)) => x > y,
            (None, Some(_)) => true,
            _ => false,
        };
        broken.then(|| Violation {
            before: before.to_string(),
            after: after.to_string(),
            before_block: p1.map(|p| p.0),
            after_block: p2.map(|p| p.0),
            post_cutoff: self.is_post_cutoff(p2.map(|p| p.0)),
            evidence,
        })
    }
}

fn same_market(trace: &Trace, a: &str, b: &str) -> bool {
    trace.market_of(a) == trace.market_of(b)
}

fn labels(trace: &Trace) -> Vec<String> {
    trace
        .header
        .requests
        .iter()
        .map(|r| r.label.clone())
        .collect()
}

/// Pairs (r1, r2) of same-market requests that every honest party saw,
/// r1 first. Built incrementally by replaying sightings in trace order.
pub fn relative_constraints(trace: &Trace) -> BTreeSet<Pair> {
    let honest = trace.honest_parties();
    let mut seen: BTreeMap<u32, BTreeSet<&str>> = BTreeMap::new();
    // (a, b) is broken once some honest party sees b without having seen a.
    let mut broken: BTreeSet<(&str, &str)> = BTreeSet::new();
    let all: Vec<String> = labels(trace);
    for (_, party, r, _) in trace.honest_sightings() {
        let mine = seen.entry(party).or_default();
        for a in &all {
            if a != r && !mine.contains(a.as_str()) {
                broken.insert((a.as_str(), r));
            }
        }
        mine.insert(r);
    }
    let everyone_saw = |r: &str| {
        honest
            .iter()
            .all(|p| seen.get(p).is_some_and(|s| s.contains(r)))
    };
    let mut out = BTreeSet::new();
    for a in &all {
        for b in &all {
            if a != b
                && same_market(trace, a, b)
                && everyone_saw(a)
                && everyone_saw(b)
                && !broken.contains(&(a.as_str(), b.as_str()))
            {
                out.insert((a.clone(), b.clone()));
            }
        }
    }
    out
}

/// Pairs (r, r2) of same-market requests with a time separating every
/// honest local sighting of r from every honest local sighting of r2.
pub fn timed_constraints(trace: &Trace) -> BTreeSet<Pair> {
    let honest = trace.honest_parties();
    let mut span: BTreeMap<&str, (u64, u64, BTreeSet<u32>)> = BTreeMap::new();
    for (_, party, r, ts) in trace.honest_sightings() {
        let e = span.entry(r).or_insert((u64::MAX, 0, BTreeSet::new()));
        e.0 = e.0.min(ts);
        e.1 = e.1.max(ts);
        e.2.insert(party);
    }
    let full: Vec<(&str, u64, u64)> = span
        .iter()
        .filter(|(_, (_, _, who))| who.len() == honest.len())
        .map(|(r, (lo, hi, _))| (*r, *lo, *hi))
        .collect();
    let mut out = BTreeSet::new();
    for &(a, _, a_hi) in &full {
        for &(b, b_lo, _) in &full {
            if a != b && a_hi < b_lo && same_market(trace, a, b) {
                out.insert((a.to_string(), b.to_string()));
            }
        }
    }
    out
}

pub fn check_relative_block_fairness(trace: &Trace) -> Verdict {
    let place = Placement::of(trace);
    let constraints = relative_constraints(trace);
    let violations = constraints
        .iter()
        .filter_map(|(a, b)| {
            place.block_violation(a, b, format!("every honest party saw {a} before {b}"))
        })
        .collect();
    Verdict::from(violations, constraints.len())
}

pub fn check_timed_fairness(trace: &Trace) -> Verdict {
    let place = Placement::of(trace);
    let constraints = timed_constraints(trace);
    let violations = constraints
        .iter()
        .filter_map(|(a, b)| {
            place.order_violation(
                a,
                b,
                format!("every honest local time for {a} is below every one for {b}"),
            )
        })
        .collect();
    Verdict::from(violations, constraints.len())
}

/// Per block: requests seen by n-t honest parties before the instance
/// started are in it, and nothing in it is unseen by every honest party.
/// Informational; the engines do not promise this.
pub fn check_block_fairness(trace: &Trace) -> Verdict {
    let quorum = trace.header.n - trace.header.t;
    let place = Placement::of(trace);
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut start = 0;
    for b in trace.blocks() {
        let mut seen_by: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
        let mut seen_at_proposal: BTreeSet<&str> = BTreeSet::new();
        for (step, party, r, _) in trace.honest_sightings() {
            if step <= start {
                seen_by.entry(r).or_default().insert(party);
            }
            if step <= b.step {
                seen_at_proposal.insert(r);
            }
        }
        for (r, who) in &seen_by {
            let delivered_earlier = place.block(r).is_some_and(|x| x < b.number);
            if who.len() >= quorum && !delivered_earlier {
                checked += 1;
                if place.block(r) != Some(b.number) {
                    violations.push(Violation {
                        before: r.to_string(),
                        after: r.to_string(),
                        before_block: place.block(r),
                        after_block: Some(b.number),
                        post_cutoff: b.post_cutoff,
                        evidence: format!(
                            "seen by {} honest parties before block {} started",
                            who.len(),
                            b.number
                        ),
                    });
                }
            }
        }
        for r in &b.requests {
            checked += 1;
            if !seen_at_proposal.contains(r.as_str()) {
                violations.push(Violation {
                    before: r.clone(),
                    after: r.clone(),
                    before_block: Some(b.number),
                    after_block: Some(b.number),
                    post_cutoff: b.post_cutoff,
                    evidence: "no honest party had seen it when the block was accepted".into(),
                });
            }
        }
        start = b.step;
    }
    Verdict::from(violations, checked)
}

/// Every request that all honest parties saw is delivered by the end.
pub fn check_absolute_fairness(trace: &Trace) -> Verdict {
    let place = Placement::of(trace);
    let honest = trace.honest_parties().len();
    let mut who: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
    for (_, party, r, _) in trace.honest_sightings() {
        who.entry(r).or_default().insert(party);
    }
    let everyone: Vec<&str> = who
        .iter()
        .filter(|(_, w)| w.len() == honest)
        .map(|(r, _)| *r)
        .collect();
    let violations = everyone
        .iter()
        .filter(|r| place.block(r).is_none())
        .map(|r| Violation {
            before: r.to_string(),
            after: r.to_string(),
            before_block: None,
            after_block: None,
            post_cutoff: false,
            evidence: "seen by every honest party but never delivered".into(),
        })
        .collect();
    Verdict::from(violations, everyone.len())
}

pub fn audit(trace: &Trace) -> FairnessReport {
    FairnessReport {
        mode: trace.header.mode,
        block_fairness: check_block_fairness(trace),
        relative_block_fairness: check_relative_block_fairness(trace),
        timed_fairness: check_timed_fairness(trace),
        absolute_fairness: check_absolute_fairness(trace),
    }
}

/// Checks that the trace's recorded blocks are internally consistent (no
/// request delivered twice, numbers consecutive).
pub fn chain_consistent(trace: &Trace) -> bool {
    let mut seen = BTreeSet::new();
    let mut next = 0;
    for r in &trace.records {
        if let Record::Block {
            number, requests, ..
        } = r
        {
            if *number != next || !requests.iter().all(|x| seen.insert(x.clone())) {
                return false;
            }
            next += 1;
        }
    }
    true
}

#[cfg(test)]
mod tests;
