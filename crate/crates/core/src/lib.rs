// SPDX-License-Identifier: Apache-2.0

//! A hard-state multicast routing protocol.
//!
//! Routers build one broadcast tree per (source, group) from unicast routing
//! information, prune it with explicit interest, and keep all of that state
//! consistent with reliable, sequenced, synchronised control messages instead
//! of periodic refreshes.

pub mod config;
pub mod digest;
pub mod interest;
pub mod neighbor;
pub mod reliable;
pub mod router;
pub mod seq;
pub mod tree;
pub mod types;
pub mod wire;

pub use config::{InterfaceConfig, RouterConfig, Timers};
pub use digest::{state_digest, DigestMode};
pub use router::{Input, OutFrame, Output, RouteInfo, Router, RouterEvent};
pub use types::*;
