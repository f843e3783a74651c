// SPDX-License-Identifier: Apache-2.0

//! Shared identifiers, metrics and protocol constants.

use serde::Serialize;
use std::fmt;
use std::net::Ipv4Addr;

/// Simulated time in microseconds.
pub type Time = u64;

pub const MICROS: Time = 1;
pub const MILLIS: Time = 1_000;
pub const SECOND: Time = 1_000_000;

/// Index of an interface inside its router.
pub type IfId = usize;

/// Per-interface sequence number.
pub type Sn = u32;

/// Boot time of an interface; zero means "unknown" on the wire.
pub type BootTime = u64;

pub const PROTOCOL_NUMBER: u8 = 103;
pub const ALL_ROUTERS: Ipv4Addr = Ipv4Addr::new(224, 0, 0, 13);
pub const PROTOCOL_VERSION: u8 = 1;

pub const DEFAULT_HELLO_PERIOD: Time = 30 * SECOND;
pub const DEFAULT_HOLD_TIME: Time = 120 * SECOND;
pub const DEFAULT_SAT: Time = 210 * SECOND;
pub const DEFAULT_RETRANSMIT: Time = SECOND;
pub const DEFAULT_SYNC_RETRANSMIT: Time = 3 * SECOND;
pub const DEFAULT_SYNC_ATTEMPTS: u32 = 5;
pub const DEFAULT_AL_HYSTERESIS: Time = SECOND;
pub const DEFAULT_FRAGMENT_SIZE: usize = 100;
pub const CHECKPOINT_EVERY_NTH_HELLO: u64 = 3;

/// A multicast tree, identified by (source, group).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TreeRef {
    pub source: Ipv4Addr,
    pub group: Ipv4Addr,
}

impl TreeRef {
    pub fn new(source: Ipv4Addr, group: Ipv4Addr) -> Self {
        Self { source, group }
    }
}

impl fmt::Display for TreeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.source, self.group)
    }
}

/// Unicast metric toward a source. Lower is better; preference compares first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Metric {
    pub pref: u32,
    pub rpc: u32,
}

impl Metric {
    pub const INFINITE: Metric = Metric { pref: u32::MAX, rpc: u32::MAX };

    pub fn new(pref: u32, rpc: u32) -> Self {
        Self { pref, rpc }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.pref, self.rpc)
    }
}

/// Ordering used by assert elections: lower metric wins, ties go to the higher address.
pub fn beats(a: (Metric, Ipv4Addr), b: (Metric, Ipv4Addr)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 > b.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TreeState {
    Active,
    Unsure,
    Inactive,
}

impl fmt::Display for TreeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeState::Active => "ACTIVE",
            TreeState::Unsure => "UNSURE",
            TreeState::Inactive => "INACTIVE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SyncState {
    Unknown,
    /// The neighbor is Master; this router is Slave.
    Master,
    /// The neighbor is Slave; this router is Master.
    Slave,
    Synced,
}

impl fmt::Display for SyncState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyncState::Unknown => "UNKNOWN",
            SyncState::Master => "MASTER",
            SyncState::Slave => "SLAVE",
            SyncState::Synced => "SYNCED",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Root,
    NonRoot,
}

/// Which interface on a link a given interface believes is the Assert Winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AwView {
    Myself,
    Neighbor(Ipv4Addr),
    Nobody,
}

impl fmt::Display for AwView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AwView::Myself => f.write_str("self"),
            AwView::Neighbor(ip) => write!(f, "{ip}"),
            AwView::Nobody => f.write_str("none"),
        }
    }
}

/// Formats microseconds as seconds with a fractional part when needed.
pub fn fmt_time(t: Time) -> String {
    if t.is_multiple_of(SECOND) {
        format!("{}s", t / SECOND)
    } else {
        format!("{}.{:06}s", t / SECOND, t % SECOND)
    }
}
