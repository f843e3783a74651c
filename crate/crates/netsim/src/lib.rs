// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event simulation of networks of routers.
//!
//! A [`Simulator`](sim::Simulator) owns one [`hpim_core::Router`] per
//! topology router and a single global event queue ordered by
//! `(time, insertion)`. Everything random (delays, loss, duplication,
//! randomised event instants) comes from one seeded generator, so a
//! `(topology, scenario, seed)` triple always produces the same trace.

pub mod check;
pub mod explore;
pub mod link;
pub mod oracle;
pub mod parse;
pub mod random;
pub mod scenario;
pub mod sim;
pub mod suite;
pub mod topology;
pub mod trace;

pub use check::Violation;
pub use parse::ParseError;
pub use scenario::Scenario;
pub use sim::{AssertResult, RunReport, SimError, SimOptions, Simulator};
pub use topology::Topology;
