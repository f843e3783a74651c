// SPDX-License-Identifier: Apache-2.0

use crate::types::*;
use std::net::Ipv4Addr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timers {
    pub hello_period: Time,
    /// Announced in Hellos, rounded down to whole seconds.
    pub hold_time: Time,
    pub source_active: Time,
    pub retransmit: Time,
    pub sync_retransmit: Time,
    pub sync_attempts: u32,
    pub al_hysteresis: Time,
}

impl Default for Timers {
    fn default() -> Self {
        Self {
            hello_period: DEFAULT_HELLO_PERIOD,
            hold_time: DEFAULT_HOLD_TIME,
            source_active: DEFAULT_SAT,
            retransmit: DEFAULT_RETRANSMIT,
            sync_retransmit: DEFAULT_SYNC_RETRANSMIT,
            sync_attempts: DEFAULT_SYNC_ATTEMPTS,
            al_hysteresis: DEFAULT_AL_HYSTERESIS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterfaceConfig {
    pub name: String,
    pub ip: Ipv4Addr,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterConfig {
    pub name: String,
    pub interfaces: Vec<InterfaceConfig>,
    pub timers: Timers,
    pub fragment_size: usize,
    pub max_sn: Sn,
    /// Downstream interest assumed for neighbors that have not reported any.
    pub initial_di: bool,
    pub key: Option<Vec<u8>>,
    /// Enforces the parent feasibility condition. Disabling it exists only
    /// to demonstrate the loops it prevents.
    pub feasibility: bool,
}

impl RouterConfig {
    pub fn new(name: impl Into<String>, interfaces: Vec<InterfaceConfig>) -> Self {
        Self {
            name: name.into(),
            interfaces,
            timers: Timers::default(),
            fragment_size: DEFAULT_FRAGMENT_SIZE,
            max_sn: Sn::MAX,
            initial_di: false,
            key: None,
            feasibility: true,
        }
    }

    pub fn router_id(&self) -> Ipv4Addr {
        self.interfaces.iter().map(|i| i.ip).max().unwrap_or(Ipv4Addr::UNSPECIFIED)
    }
}
