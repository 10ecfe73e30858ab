use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AuditError, Pair, Placement};
use crate::simnet::{Record, Trace};

pub const ORACLE_MAX_REQUESTS: usize = 12;

/// Constraints that hold if exactly the parties in `corrupt` are corrupt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub corrupt: Vec<u32>,
    pub relative: BTreeSet<Pair>,
    pub timed: BTreeSet<Pair>,
}

impl Hypothesis {
    pub fn relative_holds(&self, trace: &Trace) -> bool {
        let place = Placement::of(trace);
        self.relative
            .iter()
            .all(|(a, b)| place.block_violation(a, b, String::new()).is_none())
    }

    pub fn timed_holds(&self, trace: &Trace) -> bool {
        let place = Placement::of(trace);
        self.timed
            .iter()
            .all(|(a, b)| place.order_violation(a, b, String::new()).is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Under the trace's real corruption set.
    pub actual: Hypothesis,
    /// One entry per set of exactly t parties.
    pub hypotheses: Vec<Hypothesis>,
}

impl OracleReport {
    /// Relative constraints that some hypothesis imposes. Since nobody knows
    /// who is corrupt, a fair protocol must respect all of them.
    pub fn union(&self) -> BTreeSet<Pair> {
        self.hypotheses
            .iter()
            .flat_map(|h| h.relative.iter().cloned())
            .collect()
    }

    /// Requests forced into a common block: strongly connected components
    /// of the union, largest first, singletons omitted.
    pub fn forced_groups(&self) -> Vec<BTreeSet<String>> {
        let edges = self.union();
        let nodes: BTreeSet<&String> = edges.iter().flat_map(|(a, b)| [a, b]).collect();
        let nodes: Vec<&String> = nodes.into_iter().collect();
        let idx: BTreeMap<&String, usize> =
            nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let k = nodes.len();
        let mut reach = vec![vec![false; k]; k];
        for (a, b) in &edges {
            reach[idx[a]][idx[b]] = true;
        }
        for m in 0..k {
            for i in 0..k {
                for j in 0..k {
                    if reach[i][m] && reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let mut groups: Vec<BTreeSet<String>> = Vec::new();
        let mut placed = vec![false; k];
        for i in 0..k {
            if placed[i] {
                continue;
            }
            let group: BTreeSet<String> = (0..k)
                .filter(|&j| j == i || (reach[i][j] && reach[j][i]))
                .map(|j| {
                    placed[j] = true;
                    nodes[j].clone()
                })
                .collect();
            if group.len() > 1 {
                groups.push(group);
            }
        }
        groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        groups
    }

    /// Whether the union of relative constraints contains a cycle.
    pub fn union_is_cyclic(&self) -> bool {
        !self.forced_groups().is_empty()
    }
}

/// Sighting rank and local timestamp.
type Seen = (usize, u64);

struct Sightings {
    n: u32,
    labels: Vec<String>,
    markets: Vec<String>,
    /// Per party: request label -> (sighting rank, local ts).
    per_party: Vec<BTreeMap<String, (usize, u64)>>,
}

impl Sightings {
    fn of(trace: &Trace) -> Self {
        let n = trace.header.n as u32;
        let mut per_party: Vec<BTreeMap<String, (usize, u64)>> = vec![BTreeMap::new(); n as usize];
        for r in &trace.records {
            if let Record::See {
                party, request, ts, ..
            } = r
            {
                let log = &mut per_party[*party as usize];
                let rank = log.len();
                log.entry(request.clone()).or_insert((rank, *ts));
            }
        }
        Sightings {
            n,
            labels: trace
                .header
                .requests
                .iter()
                .map(|r| r.label.clone())
                .collect(),
            markets: trace
                .header
                .requests
                .iter()
                .map(|r| r.market.0.clone())
                .collect(),
            per_party,
        }
    }

    fn hypothesis(&self, corrupt: Vec<u32>) -> Hypothesis {
        let honest: Vec<usize> = (0..self.n)
            .filter(|p| !corrupt.contains(p))
            .map(|p| p as usize)
            .collect();
        let mut relative = BTreeSet::new();
        let mut timed = BTreeSet::new();
        let taus: BTreeSet<u64> = honest
            .iter()
            .flat_map(|p| self.per_party[*p].values().map(|(_, ts)| ts + 1))
            .collect();
        for (i, a) in self.labels.iter().enumerate() {
            for (j, b) in self.labels.iter().enumerate() {
                if i == j || self.markets[i] != self.markets[j] {
                    continue;
                }
                let both: Option<Vec<(Seen, Seen)>> = honest
                    .iter()
                    .map(|p| Some((*self.per_party[*p].get(a)?, *self.per_party[*p].get(b)?)))
                    .collect();
                let Some(both) = both else { continue };
                if both.iter().all(|(x, y)| x.0 < y.0) {
                    relative.insert((a.clone(), b.clone()));
                }
                let separated = taus
                    .iter()
                    .any(|tau| both.iter().all(|(x, y)| x.1 < *tau && y.1 >= *tau));
                if separated {
                    timed.insert((a.clone(), b.clone()));
                }
            }
        }
        Hypothesis {
            corrupt,
            relative,
            timed,
        }
    }
}

fn subsets(n: u32, size: usize) -> Vec<Vec<u32>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| (0..n).filter(|p| m & (1 << p) != 0).collect())
        .collect()
}

/// Brute-force constraint enumeration from raw sighting records only.
pub fn oracle_constraints(trace: &Trace) -> Result<OracleReport, AuditError> {
    let requests = trace.header.requests.len();
    if requests > ORACLE_MAX_REQUESTS {
        return Err(AuditError::TooLarge {
            requests,
            limit: ORACLE_MAX_REQUESTS,
        });
    }
    let s = Sightings::of(trace);
    let mut corrupt = trace.header.corrupt.clone();
    corrupt.sort_unstable();
    let actual = s.hypothesis(corrupt);
    let hypotheses = if trace.header.t == 0 {
        Vec::new()
    } else {
        subsets(s.n, trace.header.t)
            .into_iter()
            .map(|c| s.hypothesis(c))
            .collect()
    };
    Ok(OracleReport { actual, hypotheses })
}
