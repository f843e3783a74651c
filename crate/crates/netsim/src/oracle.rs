// SPDX-License-Identifier: Apache-2.0

//! Unicast routing oracle.
//!
//! The cost of a path toward a source is the sum of the costs of the
//! interfaces that would carry a packet upstream along it, the last one
//! being the interface on the source's subnet. The root interface is the
//! interface starting a cheapest path; ties go to the lowest interface id.

use crate::topology::Topology;
use hpim_core::{Metric, RouteInfo};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::Ipv4Addr;

/// Liveness and costs the oracle routes over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetState {
    pub router_up: Vec<bool>,
    pub link_up: Vec<bool>,
    pub iface_up: Vec<Vec<bool>>,
    pub costs: Vec<Vec<u32>>,
}

impl NetState {
    pub fn new(topo: &Topology) -> Self {
        Self {
            router_up: vec![true; topo.routers.len()],
            link_up: vec![true; topo.links.len()],
            iface_up: topo.routers.iter().map(|r| vec![true; r.ifaces.len()]).collect(),
            costs: topo.routers.iter().map(|r| r.ifaces.iter().map(|i| i.cost).collect()).collect(),
        }
    }

    pub fn live(&self, topo: &Topology, r: usize, i: usize) -> bool {
        self.router_up[r] && self.iface_up[r][i] && self.link_up[topo.routers[r].ifaces[i].link]
    }
}

/// Shortest upstream cost from every router to the subnet `link`.
pub fn distances(topo: &Topology, net: &NetState, link: usize) -> Vec<Option<u64>> {
    let mut dist: Vec<Option<u64>> = vec![None; topo.routers.len()];
    let mut heap = BinaryHeap::new();
    for (r, i) in topo.attached(link) {
        if net.live(topo, r, i) {
            heap.push(Reverse((u64::from(net.costs[r][i]), r)));
        }
    }
    while let Some(Reverse((d, q))) = heap.pop() {
        if dist[q].is_some() {
            continue;
        }
        dist[q] = Some(d);
        for (j, iface) in topo.routers[q].ifaces.iter().enumerate() {
            if !net.live(topo, q, j) {
                continue;
            }
            for (r, k) in topo.attached(iface.link) {
                if r != q && dist[r].is_none() && net.live(topo, r, k) {
                    heap.push(Reverse((d + u64::from(net.costs[r][k]), r)));
                }
            }
        }
    }
    dist
}

/// Route of router `r` toward the subnet `link` given precomputed distances.
pub fn route_for(topo: &Topology, net: &NetState, link: usize, dist: &[Option<u64>], r: usize, pref: u32) -> RouteInfo {
    let def = &topo.routers[r];
    let source_ifaces: Vec<usize> =
        def.ifaces.iter().enumerate().filter(|(_, i)| i.link == link).map(|(j, _)| j).collect();
    let mut best: Option<(u64, usize)> = None;
    if net.router_up[r] {
        for (j, iface) in def.ifaces.iter().enumerate() {
            if !net.live(topo, r, j) {
                continue;
            }
            let c = u64::from(net.costs[r][j]);
            let value = if iface.link == link {
                Some(c)
            } else {
                topo.attached(iface.link)
                    .filter(|(q, k)| *q != r && net.live(topo, *q, *k))
                    .filter_map(|(q, _)| dist[q])
                    .min()
                    .map(|d| d + c)
            };
            if let Some(v) = value {
                if best.is_none_or(|b| (v, j) < b) {
                    best = Some((v, j));
                }
            }
        }
    }
    RouteInfo {
        root: best.map(|b| b.1),
        metric: best.map(|b| Metric::new(pref, b.0.min(u64::from(u32::MAX - 1)) as u32)),
        source_ifaces,
    }
}

/// Routes of every router toward every source, keyed by source address.
pub fn compute_routes(topo: &Topology, net: &NetState) -> Vec<BTreeMap<Ipv4Addr, RouteInfo>> {
    let mut out = vec![BTreeMap::new(); topo.routers.len()];
    for s in &topo.sources {
        let dist = distances(topo, net, s.link);
        for (r, table) in out.iter_mut().enumerate() {
            table.insert(s.ip, route_for(topo, net, s.link, &dist, r, topo.params.preference));
        }
    }
    out
}
