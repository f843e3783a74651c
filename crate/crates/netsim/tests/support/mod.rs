// SPDX-License-Identifier: Apache-2.0

//! Helpers shared by the integration targets.

#![allow(dead_code)]

use hpim_core::wire::{self, Message, MsgType};
use hpim_core::{
    IfId, Input, InterfaceConfig, Metric, Output, RouteInfo, Router, RouterConfig, RouterEvent, Time, Timers, TreeRef,
    SECOND,
};
use hpim_netsim::scenario::Scenario;
use hpim_netsim::sim::{SimOptions, Simulator};
use hpim_netsim::suite::default_root;
use hpim_netsim::topology::Topology;
use std::collections::VecDeque;
use std::net::Ipv4Addr;
use std::path::PathBuf;

pub fn scenario_path(rel: &str) -> PathBuf {
    default_root().join(rel)
}

/// Loads `topology` and runs the given script lines on it.
pub fn sim_with(topology: &str, script: &str, opts: &SimOptions) -> Simulator {
    let topo = Topology::load(&scenario_path(topology)).expect("topology loads");
    let sc = Scenario::parse(script).expect("script parses");
    Simulator::build(topo, &sc, opts).expect("simulator builds")
}

/// Applies one scenario line, e.g. an assertion, right now.
pub fn apply_line(sim: &mut Simulator, line: &str) -> Result<(), String> {
    let sc = Scenario::parse(&format!("at 0s {line}")).map_err(|e| e.to_string())?;
    sim.apply(&sc.events[0].action)
}

pub const SOURCE: Ipv4Addr = Ipv4Addr::new(10, 3, 0, 100);

pub fn group(n: u8) -> Ipv4Addr {
    Ipv4Addr::new(232, 1, 1, n)
}

pub fn tree(n: u8) -> TreeRef {
    TreeRef::new(SOURCE, group(n))
}

/// A frame between the two routers of a [`Pair`].
#[derive(Debug, Clone)]
pub struct Transit {
    /// Index of the sending router.
    pub from: usize,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub bytes: Vec<u8>,
    pub msg: Message,
    pub retransmission: bool,
}

impl Transit {
    pub fn msg_type(&self) -> MsgType {
        self.msg.msg_type()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Deliver,
    Drop,
    Hold,
}

/// R1 (originator, eth0 on the source subnet, eth1 toward R2) and R2 (eth0
/// toward R1) joined by one lossless link whose frames the test steers.
pub struct Pair {
    pub routers: [Router; 2],
    pub now: Time,
    queue: VecDeque<Transit>,
    /// Frames set aside by a [`Fate::Hold`] verdict.
    pub held: Vec<Transit>,
    /// Every frame either router emitted toward the other, in order.
    pub log: Vec<Transit>,
    pub events: Vec<(usize, RouterEvent)>,
}

/// The link-facing interface of each router.
pub const LINK_IFACE: [IfId; 2] = [1, 0];

pub fn fast_timers() -> Timers {
    Timers { hello_period: SECOND, hold_time: 3 * SECOND, ..Timers::default() }
}

impl Pair {
    pub fn new(timers: Timers) -> Self {
        let iface = |name: &str, ip: [u8; 4]| InterfaceConfig { name: name.into(), ip: ip.into(), cost: 10 };
        let mut c1 = RouterConfig::new("R1", vec![iface("eth0", [10, 3, 0, 1]), iface("eth1", [10, 3, 1, 1])]);
        let mut c2 = RouterConfig::new("R2", vec![iface("eth0", [10, 3, 1, 2])]);
        c1.timers = timers.clone();
        c2.timers = timers;
        let mut pair = Self {
            routers: [Router::new(c1, 0), Router::new(c2, 0)],
            now: 0,
            queue: VecDeque::new(),
            held: Vec::new(),
            log: Vec::new(),
            events: Vec::new(),
        };
        let r1 = RouteInfo { root: Some(0), metric: Some(Metric::new(0, 10)), source_ifaces: vec![0] };
        let r2 = RouteInfo { root: Some(0), metric: Some(Metric::new(0, 20)), source_ifaces: vec![] };
        pair.input(0, Input::Route { source: SOURCE, route: r1 });
        pair.input(1, Input::Route { source: SOURCE, route: r2 });
        pair
    }

    pub fn input(&mut self, r: usize, input: Input<'_>) {
        let out = self.routers[r].dispatch(self.now, input).expect("router accepts input");
        self.collect(r, out);
    }

    /// A data packet of `tree` arriving at R1 from the source.
    pub fn data(&mut self, tree: TreeRef) {
        let (_, out) = self.routers[0].forward_data(self.now, tree, 0);
        self.collect(0, out);
    }

    /// Replaces router `r` with a freshly booted one.
    pub fn reboot(&mut self, r: usize) {
        let cfg = self.routers[r].cfg.clone();
        let route = self.routers[r].routes.get(&SOURCE).cloned().expect("route installed");
        self.routers[r] = Router::new(cfg, self.now);
        self.input(r, Input::Route { source: SOURCE, route });
    }

    fn collect(&mut self, r: usize, out: Output) {
        for f in out.frames {
            if f.iface != LINK_IFACE[r] {
                continue;
            }
            let t = Transit {
                from: r,
                src: f.src,
                dst: f.dst,
                bytes: f.bytes,
                msg: f.msg,
                retransmission: f.retransmission,
            };
            self.log.push(t.clone());
            self.queue.push_back(t);
        }
        self.events.extend(out.events.into_iter().map(|e| (r, e)));
    }

    /// Hands a frame to the router it is addressed to.
    pub fn deliver(&mut self, t: &Transit) {
        let to = 1 - t.from;
        let input = Input::Frame { iface: LINK_IFACE[to], src: t.src, dst: t.dst, bytes: &t.bytes };
        self.input(to, input);
    }

    /// Delivers queued frames in order until none are left.
    pub fn flush(&mut self, fate: &mut impl FnMut(&Transit) -> Fate) {
        while let Some(t) = self.queue.pop_front() {
            match fate(&t) {
                Fate::Deliver => self.deliver(&t),
                Fate::Drop => {}
                Fate::Hold => self.held.push(t),
            }
        }
    }

    /// Runs timers and traffic up to `end`.
    pub fn run_until(&mut self, end: Time, mut fate: impl FnMut(&Transit) -> Fate) {
        loop {
            self.flush(&mut fate);
            let next = self.routers.iter().filter_map(Router::next_deadline).min();
            match next {
                Some(t) if t <= end => {
                    self.now = self.now.max(t);
                    for r in 0..2 {
                        if self.routers[r].next_deadline().is_some_and(|d| d <= self.now) {
                            self.input(r, Input::Timer);
                        }
                    }
                }
                _ => break,
            }
        }
        self.now = self.now.max(end);
    }

    /// Drains the queue but keeps the frames for the caller to deliver.
    pub fn take_queued(&mut self) -> Vec<Transit> {
        self.queue.drain(..).collect()
    }

    pub fn peer_ip(&self, r: usize) -> Ipv4Addr {
        self.routers[1 - r].ifaces[LINK_IFACE[1 - r]].ip()
    }

    pub fn record(&self, r: usize) -> Option<&hpim_core::neighbor::NeighborRecord> {
        self.routers[r].ifaces[LINK_IFACE[r]].neighbors.get(&self.peer_ip(r))
    }

    pub fn decode(t: &Transit) -> Message {
        wire::decode(&t.bytes, t.src, t.dst, None).expect("frame decodes")
    }
}

pub fn deliver_all(_: &Transit) -> Fate {
    Fate::Deliver
}
