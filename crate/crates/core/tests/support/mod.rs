// SPDX-License-Identifier: Apache-2.0

//! A tiny lossless network of routers whose frames a test can steer.

#![allow(dead_code)]

use hpim_core::neighbor::NeighborRecord;
use hpim_core::wire::{Message, MsgType};
use hpim_core::{
    IfId, Input, InterfaceConfig, Metric, Output, RouteInfo, Router, RouterConfig, RouterEvent, Time, Timers, TreeRef,
    SECOND,
};
use std::collections::VecDeque;
use std::net::Ipv4Addr;

pub const SOURCE: Ipv4Addr = Ipv4Addr::new(10, 9, 0, 100);
pub const KEY: &[u8] = b"bench-key";

pub fn tree(g: u8) -> TreeRef {
    TreeRef::new(SOURCE, Ipv4Addr::new(232, 1, 1, g))
}

pub fn fast_timers() -> Timers {
    Timers { hello_period: SECOND, hold_time: 3 * SECOND, ..Timers::default() }
}

#[derive(Debug, Clone)]
pub struct Transit {
    pub from: usize,
    pub iface: IfId,
    pub link: usize,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub bytes: Vec<u8>,
    pub msg: Message,
    pub retransmission: bool,
    pub t: Time,
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

pub fn deliver_all(_: &Transit) -> Fate {
    Fate::Deliver
}

/// Routers attached to numbered links. Link 0 is the source subnet.
pub struct Bench {
    pub routers: Vec<Router>,
    pub links: Vec<Vec<(usize, IfId)>>,
    pub down: Vec<bool>,
    pub now: Time,
    queue: VecDeque<Transit>,
    pub held: Vec<Transit>,
    pub log: Vec<Transit>,
    pub events: Vec<(usize, Time, RouterEvent)>,
}

/// One router: its name and `(link, cost)` per interface. Addresses are
/// `10.9.<link>.<router + 1>`.
pub struct Node<'a> {
    pub name: &'a str,
    pub ifaces: &'a [(usize, u32)],
}

impl Bench {
    pub fn new(nodes: &[Node<'_>], timers: Timers, key: Option<&[u8]>) -> Self {
        let n_links = nodes.iter().flat_map(|s| s.ifaces.iter().map(|i| i.0 + 1)).max().unwrap_or(1);
        let mut links = vec![Vec::new(); n_links];
        let mut routers = Vec::new();
        for (r, s) in nodes.iter().enumerate() {
            let ifaces: Vec<InterfaceConfig> = s
                .ifaces
                .iter()
                .enumerate()
                .map(|(i, &(l, cost))| {
                    links[l].push((r, i));
                    InterfaceConfig { name: format!("eth{i}"), ip: Ipv4Addr::new(10, 9, l as u8, r as u8 + 1), cost }
                })
                .collect();
            let mut cfg = RouterConfig::new(s.name, ifaces);
            cfg.timers = timers.clone();
            cfg.key = key.map(<[u8]>::to_vec);
            routers.push(Router::new(cfg, 0));
        }
        let n = routers.len();
        Self {
            routers,
            links,
            down: vec![false; n],
            now: 0,
            queue: VecDeque::new(),
            held: vec![],
            log: vec![],
            events: vec![],
        }
    }

    /// R1 on the source subnet and R2 behind it.
    pub fn pair() -> Self {
        let mut b = Self::new(
            &[Node { name: "R1", ifaces: &[(0, 10), (1, 10)] }, Node { name: "R2", ifaces: &[(1, 10)] }],
            fast_timers(),
            None,
        );
        b.install_routes();
        b
    }

    pub fn ip(&self, r: usize, i: IfId) -> Ipv4Addr {
        self.routers[r].ifaces[i].ip()
    }

    pub fn index(&self, name: &str) -> usize {
        self.routers.iter().position(|r| r.name() == name).expect("router exists")
    }

    /// Routes toward [`SOURCE`] by shortest path over interface costs.
    pub fn install_routes(&mut self) {
        let n = self.routers.len();
        let mut dist: Vec<Option<(u32, IfId)>> = vec![None; n];
        for &(r, i) in &self.links[0] {
            let c = self.routers[r].cfg.interfaces[i].cost;
            if dist[r].is_none_or(|(d, _)| c < d) {
                dist[r] = Some((c, i));
            }
        }
        // Bellman-Ford; the benches are tiny.
        for _ in 0..n {
            for l in 1..self.links.len() {
                for &(q, _) in &self.links[l] {
                    let Some((dq, _)) = dist[q] else { continue };
                    for &(r, k) in &self.links[l] {
                        if r == q || self.down[r] {
                            continue;
                        }
                        let d = dq + self.routers[r].cfg.interfaces[k].cost;
                        if dist[r].is_none_or(|(dr, ir)| d < dr || (d == dr && k < ir)) {
                            dist[r] = Some((d, k));
                        }
                    }
                }
            }
        }
        for (r, best) in dist.iter().enumerate() {
            let source_ifaces: Vec<IfId> = self.links[0].iter().filter(|x| x.0 == r).map(|x| x.1).collect();
            let route = RouteInfo { root: best.map(|d| d.1), metric: best.map(|d| Metric::new(0, d.0)), source_ifaces };
            self.input(r, Input::Route { source: SOURCE, route });
        }
    }

    pub fn input(&mut self, r: usize, input: Input<'_>) {
        if self.down[r] {
            return;
        }
        let out = self.routers[r].dispatch(self.now, input).expect("router accepts input");
        self.collect(r, out);
    }

    /// A data packet of `tree` reaching every router on the source subnet.
    pub fn data(&mut self, tree: TreeRef) {
        for (r, i) in self.links[0].clone() {
            if !self.down[r] {
                let (_, out) = self.routers[r].forward_data(self.now, tree, i);
                self.collect(r, out);
            }
        }
    }

    /// Replaces router `r` with a freshly booted one holding the same routes.
    pub fn reboot(&mut self, r: usize) {
        let cfg = self.routers[r].cfg.clone();
        let routes = self.routers[r].routes.clone();
        self.routers[r] = Router::new(cfg, self.now);
        self.down[r] = false;
        for (source, route) in routes {
            self.input(r, Input::Route { source, route });
        }
    }

    fn link_of(&self, r: usize, i: IfId) -> usize {
        self.links.iter().position(|l| l.contains(&(r, i))).expect("interface attached")
    }

    fn collect(&mut self, r: usize, out: Output) {
        for f in out.frames {
            let link = self.link_of(r, f.iface);
            let t = Transit {
                from: r,
                iface: f.iface,
                link,
                src: f.src,
                dst: f.dst,
                bytes: f.bytes,
                msg: f.msg,
                retransmission: f.retransmission,
                t: self.now,
            };
            self.log.push(t.clone());
            self.queue.push_back(t);
        }
        let now = self.now;
        self.events.extend(out.events.into_iter().map(|e| (r, now, e)));
    }

    /// Hands a frame to every addressee on its link.
    pub fn deliver(&mut self, t: &Transit) {
        for (q, k) in self.links[t.link].clone() {
            if q == t.from || self.down[q] {
                continue;
            }
            if t.dst.is_multicast() || t.dst == self.ip(q, k) {
                let input = Input::Frame { iface: k, src: t.src, dst: t.dst, bytes: &t.bytes };
                self.input(q, input);
            }
        }
    }

    pub fn flush(&mut self, fate: &mut impl FnMut(&Transit) -> Fate) {
        while let Some(t) = self.queue.pop_front() {
            match fate(&t) {
                Fate::Deliver => self.deliver(&t),
                Fate::Drop => {}
                Fate::Hold => self.held.push(t),
            }
        }
    }

    pub fn run_until(&mut self, end: Time, mut fate: impl FnMut(&Transit) -> Fate) {
        loop {
            self.flush(&mut fate);
            let next = (0..self.routers.len())
                .filter(|r| !self.down[*r])
                .filter_map(|r| self.routers[r].next_deadline())
                .min();
            match next {
                Some(t) if t <= end => {
                    self.now = self.now.max(t);
                    for r in 0..self.routers.len() {
                        if !self.down[r] && self.routers[r].next_deadline().is_some_and(|d| d <= self.now) {
                            self.input(r, Input::Timer);
                        }
                    }
                }
                _ => break,
            }
        }
        self.now = self.now.max(end);
    }

    pub fn settle(&mut self, dt: Time) {
        self.run_until(self.now + dt, deliver_all);
    }

    /// What router `r` knows about the router owning `peer_ip`.
    pub fn record(&self, r: usize, i: IfId, peer_ip: Ipv4Addr) -> Option<&NeighborRecord> {
        self.routers[r].ifaces[i].neighbors.get(&peer_ip)
    }

    pub fn sent_since(&self, mark: usize) -> impl Iterator<Item = &Transit> {
        self.log[mark..].iter()
    }
}
