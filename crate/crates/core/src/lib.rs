//! Order-fairness pre-protocols for byzantine atomic broadcast, with an
//! adversarial network simulator and a fairness auditor.

pub mod abc;
pub mod audit;
pub mod cli;
pub mod codec;
pub mod fairness;
pub mod leaders;
pub mod model;
pub mod simnet;
pub mod validity;
pub mod votes;

#[cfg(test)]
mod testkit;
