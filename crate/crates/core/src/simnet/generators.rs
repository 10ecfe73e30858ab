use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{
    Action, Behavior, ClockModel, CorruptParty, LeaderPolicy, MessageKind, MessageRef, RequestSpec,
    Scenario, ScheduleEvent, INJECTION_STOP,
};
use super::SimError;
use crate::leaders::{EngineMode, StopRule};
use crate::model::MarketId;

struct Schedule {
    step: u64,
    events: Vec<ScheduleEvent>,
}

impl Schedule {
    fn new() -> Self {
        Schedule {
            step: 0,
            events: Vec::new(),
        }
    }

    fn push(&mut self, action: Action) {
        self.step += 1;
        self.events.push(ScheduleEvent {
            step: self.step,
            action,
        });
    }

    fn see(&mut self, party: u32, request: &str) {
        self.push(Action::See {
            party,
            request: request.into(),
        });
    }

    fn deliver_votes(&mut self, from: u32, n: usize, request: &str) {
        for to in 0..n as u32 {
            self.push(Action::Deliver {
                message: MessageRef {
                    kind: MessageKind::Vote,
                    from,
                    to,
                    request: request.into(),
                    copy: 0,
                },
            });
        }
    }

    fn checkpoint(&mut self, label: &str) {
        self.push(Action::Checkpoint {
            label: label.into(),
        });
    }
}

fn labels(count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("m{i}")).collect()
}

fn base(n: usize, mode: EngineMode, requests: Vec<RequestSpec>, origin: String) -> Scenario {
    Scenario {
        n,
        t: (n - 1) / 3,
        mode,
        r_max: None,
        stop: StopRule::Threshold,
        key_seed: 0,
        leaders: LeaderPolicy::RoundRobin,
        corrupt: Vec::new(),
        clock: ClockModel::default(),
        adversary_p: None,
        adversary_seed: 0,
        origin: Some(origin),
        requests,
        events: Vec::new(),
    }
}

/// Party `i` sees the `n` requests in the rotation starting at `m{i+1}`;
/// nothing is delivered until every sighting happened.
pub fn cycle(n: usize, mode: EngineMode) -> Scenario {
    let names = labels(n);
    let mut s = Schedule::new();
    for p in 0..n {
        for k in 0..n {
            s.see(p as u32, &names[(p + k) % n]);
        }
    }
    s.checkpoint(INJECTION_STOP);
    s.push(Action::Flush);
    let mut sc = base(
        n,
        mode,
        names.into_iter().map(RequestSpec::new).collect(),
        format!("cycle n={n}"),
    );
    sc.events = s.events;
    sc
}

/// Sightings of one family as three thirds of (party, request offset)
/// pairs, column by column, for the unreversed party order.
fn family_thirds() -> [Vec<(u32, usize)>; 3] {
    [
        vec![(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)],
        vec![
            (1, 3),
            (2, 3),
            (3, 3),
            (1, 0),
            (2, 0),
            (3, 0),
            (2, 1),
            (3, 1),
            (3, 2),
        ],
        vec![(0, 3)],
    ]
}

/// `k` chained four-request families on four parties. Odd families mirror
/// the party order. Family `j`'s first third runs in round `j`, its second
/// in round `j+1` and its last in round `j+2`, so consecutive families
/// overlap and every family must share a block with its neighbours.
///
/// Votes are delivered as soon as they are cast. The last family has no
/// successor to hold it open, so the votes of its second and third thirds
/// stay in flight until after the injection-stop checkpoint.
pub fn segments(k: usize, mode: EngineMode) -> Result<Scenario, SimError> {
    if k < 2 {
        return Err(SimError::Scenario(format!(
            "segments needs depth >= 2, got {k}"
        )));
    }
    let names = labels(4 * k);
    let thirds = family_thirds();
    let mut s = Schedule::new();
    for round in 0..k + 2 {
        for (third, cells) in thirds.iter().enumerate() {
            let Some(f) = round.checked_sub(third).filter(|f| *f < k) else {
                continue;
            };
            let tail = f == k - 1 && third > 0;
            for &(p, off) in cells {
                let party = if f % 2 == 0 { p } else { 3 - p };
                let label = &names[4 * f + off];
                s.see(party, label);
                if !tail {
                    s.deliver_votes(party, 4, label);
                }
            }
        }
    }
    s.checkpoint(INJECTION_STOP);
    let mut sc = base(
        4,
        mode,
        names.into_iter().map(RequestSpec::new).collect(),
        format!("segments depth={k}"),
    );
    sc.events = s.events;
    Ok(sc)
}

/// Every party sees every request in the same order; all messages flush
/// after each request.
pub fn benign(n: usize, requests: usize, mode: EngineMode) -> Scenario {
    let names = labels(requests);
    let mut s = Schedule::new();
    for r in &names {
        for p in 0..n as u32 {
            s.see(p, r);
        }
        s.push(Action::Flush);
    }
    s.checkpoint(INJECTION_STOP);
    let mut sc = base(
        n,
        mode,
        names.into_iter().map(RequestSpec::new).collect(),
        format!("benign n={n} requests={requests}"),
    );
    sc.events = s.events;
    sc
}

/// Wraps `base` with the probabilistic adversary failure.
pub fn probabilistic(mut base: Scenario, p: f64, seed: u64) -> Result<Scenario, SimError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SimError::Scenario(format!(
            "probability must be in (0, 1], got {p}"
        )));
    }
    base.adversary_p = Some(p);
    base.adversary_seed = seed;
    let origin = base.origin.take().unwrap_or_else(|| "scenario".into());
    base.origin = Some(format!("{origin} p={p} seed={seed}"));
    Ok(base)
}

/// Shape of [`random_fuzz`] scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzProfile {
    pub mode: EngineMode,
    pub max_requests: usize,
    pub allow_corrupt: bool,
}

impl FuzzProfile {
    pub fn new(mode: EngineMode) -> Self {
        FuzzProfile {
            mode,
            max_requests: 10,
            allow_corrupt: true,
        }
    }
}

/// A seeded random scenario: n in {4, 7}, up to `max_requests` requests in
/// one or two markets, up to t corrupt parties, random sightings, random
/// flushes and a random delivery probability.
pub fn random_fuzz(seed: u64, profile: FuzzProfile) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = if rng.gen_bool(0.5) { 4 } else { 7 };
    let t = (n - 1) / 3;
    let count = rng.gen_range(1..=profile.max_requests.max(1));
    let two_markets = rng.gen_bool(0.3);
    let requests: Vec<RequestSpec> = labels(count)
        .into_iter()
        .map(|label| RequestSpec {
            label,
            market: if two_markets && rng.gen_bool(0.5) {
                MarketId::new("second")
            } else {
                MarketId::default()
            },
        })
        .collect();

    let mut parties: Vec<u32> = (0..n as u32).collect();
    parties.shuffle(&mut rng);
    let n_corrupt = if profile.allow_corrupt {
        rng.gen_range(0..=t)
    } else {
        0
    };
    let mut corrupt: Vec<CorruptParty> = parties[..n_corrupt]
        .iter()
        .map(|&party| CorruptParty {
            party,
            behavior: match rng.gen_range(0..3) {
                0 => Behavior::Reorder {
                    window: rng.gen_range(2..=3),
                },
                1 => Behavior::Equivocate,
                _ => Behavior::Skew {
                    offset: rng.gen_range(-20..=20),
                },
            },
            as_leader: None,
        })
        .collect();
    corrupt.sort_by_key(|c| c.party);

    // Each honest party sees a random subset; relays spread the rest.
    let mut sightings: Vec<(u32, usize)> = (0..n as u32)
        .flat_map(|p| (0..count).map(move |r| (p, r)))
        .filter(|_| rng.gen_bool(0.6))
        .collect();
    sightings.shuffle(&mut rng);
    let mut s = Schedule::new();
    for (p, r) in sightings {
        s.see(p, &requests[r].label);
        if rng.gen_bool(0.15) {
            s.push(Action::Flush);
        }
    }
    s.checkpoint(INJECTION_STOP);

    let offsets = (0..n).map(|_| rng.gen_range(0..10)).collect();
    Scenario {
        n,
        t,
        mode: profile.mode,
        r_max: None,
        stop: StopRule::Threshold,
        key_seed: seed,
        leaders: LeaderPolicy::RoundRobin,
        corrupt,
        clock: ClockModel {
            rate: rng.gen_range(1..=3),
            offsets,
        },
        adversary_p: Some(rng.gen_range(0.05..=1.0)),
        adversary_seed: seed ^ 0x5eed,
        origin: Some(format!("fuzz seed={seed}")),
        requests,
        events: s.events,
    }
}
