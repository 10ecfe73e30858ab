//! Deterministic discrete-event network simulator. The adversary's schedule
//! decides when each party sees each request and when each message arrives.

mod generators;
mod runner;
mod scenario;
mod trace;

use thiserror::Error;

use crate::model::ConfigError;

pub use generators::{benign, cycle, probabilistic, random_fuzz, segments, FuzzProfile};
pub use runner::{run, RunOutput};
pub use scenario::{
    Action, Behavior, ClockModel, CorruptParty, LeaderFault, LeaderPolicy, MessageKind, MessageRef,
    RequestSpec, Scenario, ScheduleEvent, INJECTION_STOP,
};
pub use trace::{
    Record, RunStats, SightingWindow, Trace, TraceBlock, TraceHeader, TraceRequest, TRACE_VERSION,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("schedule steps must strictly increase (step {step})")]
    StepOrder { step: u64 },
    #[error("step {step}: no such message in flight: {message}")]
    UnknownMessage { step: u64, message: String },
    #[error("step {step}: message already delivered: {message}")]
    AlreadyDelivered { step: u64, message: String },
    #[error("bad trace: {0}")]
    Trace(String),
}

#[cfg(test)]
mod tests;
