// SPDX-License-Identifier: Apache-2.0

//! Global invariants over a settled network.
//!
//! Expected states come from the unicast oracle and from which originators
//! still consider their source active; nothing here reads the simulator's
//! own idea of which sources are sending.

use crate::oracle::compute_routes;
use crate::sim::Simulator;
use hpim_core::tree::TreeView;
use hpim_core::{Role, RouteInfo, TreeRef, TreeState};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

pub const PROPERTIES: [&str; 6] = [
    "quiescent_correctness",
    "loop_freedom",
    "aw_uniqueness",
    "mroute_coherence",
    "sync_symmetry",
    "aw_interest_knowledge",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub property: &'static str,
    pub detail: String,
}

impl Violation {
    pub fn new(property: &'static str, detail: impl Into<String>) -> Self {
        Self { property, detail: detail.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.property, self.detail)
    }
}

struct Ctx<'a> {
    sim: &'a Simulator,
    tree: TreeRef,
    views: Vec<Option<TreeView>>,
    out: &'a mut Vec<Violation>,
}

impl Ctx<'_> {
    fn name(&self, r: usize) -> &str {
        &self.sim.topo.routers[r].name
    }

    fn fail(&mut self, property: &'static str, detail: String) {
        self.out.push(Violation::new(property, format!("{} {detail}", self.tree)));
    }

    fn active(&self, r: usize) -> bool {
        self.views[r].as_ref().is_some_and(|v| v.state == TreeState::Active)
    }

    fn live(&self, r: usize, i: usize) -> bool {
        self.sim.routers[r].is_some() && self.sim.net.live(&self.sim.topo, r, i)
    }
}

/// Evaluates every property; meaningful only once the network has settled.
pub fn quiescent(sim: &Simulator) -> Vec<Violation> {
    let mut out = Vec::new();
    let routes = compute_routes(&sim.topo, &sim.net);
    for src in &sim.topo.sources {
        for &group in &src.groups {
            let tree = TreeRef::new(src.ip, group);
            let views = sim.routers.iter().map(|r| r.as_ref().map(|r| r.view(tree))).collect();
            let mut cx = Ctx { sim, tree, views, out: &mut out };
            correctness(&mut cx, &routes);
            loop_freedom(&mut cx);
            aw_uniqueness(&mut cx);
            mroute_coherence(&mut cx);
            interest_knowledge(&mut cx);
        }
    }
    sync_symmetry(sim, &mut out);
    out
}

/// Whether each router is fed from a live source along unicast routes: an
/// originator by its own Source Active Timer, anyone else by a fed neighbor
/// on its root link that announces itself upstream with a strictly lower
/// metric.
fn fed_routers(sim: &Simulator, tree: TreeRef, routes: &[BTreeMap<Ipv4Addr, RouteInfo>]) -> Vec<bool> {
    let n = sim.routers.len();
    let route = |r: usize| &routes[r][&tree.source];
    let mut order: Vec<usize> = (0..n).filter(|&r| sim.routers[r].is_some() && route(r).root.is_some()).collect();
    order.sort_by_key(|&r| route(r).metric);
    let mut fed = vec![false; n];
    for r in order {
        let info = route(r);
        let root = info.root.expect("filtered");
        fed[r] = if info.source_ifaces.contains(&root) {
            sim.routers[r].as_ref().and_then(|x| x.trees.get(&tree)).is_some_and(|e| e.source_active)
        } else {
            sim.live_peers(r, root)
                .any(|(q, k)| fed[q] && announces(routes, tree, q, k) && route(q).metric < info.metric)
        };
    }
    fed
}

/// Whether `(q, k)` would carry IamUpstream if `q` were ACTIVE.
fn announces(routes: &[BTreeMap<Ipv4Addr, RouteInfo>], tree: TreeRef, q: usize, k: usize) -> bool {
    let info = &routes[q][&tree.source];
    info.root != Some(k) && !info.source_ifaces.contains(&k)
}

fn correctness(cx: &mut Ctx<'_>, routes: &[BTreeMap<Ipv4Addr, RouteInfo>]) {
    let sim = cx.sim;
    let tree = cx.tree;
    let fed = fed_routers(sim, tree, routes);
    for r in 0..sim.routers.len() {
        let Some(view) = cx.views[r].clone() else { continue };
        let route = &routes[r][&tree.source];
        if fed[r] {
            if view.state != TreeState::Active || view.root != route.root || Some(view.rpc) != route.metric {
                let detail = format!(
                    "{}: {} root {:?} rpc {}, oracle expects ACTIVE root {:?} rpc {:?}",
                    cx.name(r),
                    view.state,
                    view.root,
                    view.rpc,
                    route.root,
                    route.metric.map(|m| m.rpc)
                );
                cx.fail("quiescent_correctness", detail);
            }
            continue;
        }
        let any_upstream = (0..sim.topo.routers[r].ifaces.len())
            .filter(|&i| sim.net.live(&sim.topo, r, i))
            .any(|i| sim.live_peers(r, i).any(|(q, k)| fed[q] && announces(routes, tree, q, k)));
        let want = if any_upstream { TreeState::Unsure } else { TreeState::Inactive };
        if view.state != want {
            let detail = format!("{}: {} but no feasible fed parent exists, expected {want}", cx.name(r), view.state);
            cx.fail("quiescent_correctness", detail);
        }
    }
    // What each router records about its neighbors must match what they are.
    for (r, router) in sim.routers.iter().enumerate() {
        let Some(router) = router else { continue };
        for (i, iface) in router.ifaces.iter().enumerate() {
            for (q, k) in sim.live_peers(r, i).collect::<Vec<_>>() {
                let ip = sim.topo.routers[q].ifaces[k].ip;
                let Some(rec) = iface.neighbors.get(&ip) else { continue };
                let v = cx.views[q].as_ref().expect("live peer");
                let iv = v.iface(k);
                let expected = (v.state == TreeState::Active
                    && iv.is_some_and(|x| x.role == Role::NonRoot && !x.source_attached))
                .then_some(v.rpc);
                let recorded = rec.upstream.get(&tree).copied();
                if recorded != expected {
                    let detail = format!(
                        "{} records {:?} for {} on {}, which announces {:?}",
                        cx.name(r),
                        recorded,
                        cx.name(q),
                        sim.topo.routers[r].ifaces[i].name,
                        expected
                    );
                    cx.fail("quiescent_correctness", detail);
                }
            }
        }
    }
}

fn loop_freedom(cx: &mut Ctx<'_>) {
    let sim = cx.sim;
    for r in 0..sim.routers.len() {
        if !cx.active(r) || cx.views[r].as_ref().is_some_and(|v| v.originator) {
            continue;
        }
        let mut seen = BTreeSet::from([r]);
        let mut cur = r;
        loop {
            let view = cx.views[cur].as_ref().expect("active");
            if view.originator {
                break;
            }
            let Some((ip, _)) = view.parent else {
                let detail = format!("{} is ACTIVE without a parent", cx.name(cur));
                cx.fail("loop_freedom", detail);
                break;
            };
            let Some((q, k)) = sim.topo.owner_of(ip) else { break };
            if !cx.live(q, k) || !cx.active(q) {
                let detail = format!("{} follows {} which is not an ACTIVE live router", cx.name(cur), ip);
                cx.fail("loop_freedom", detail);
                break;
            }
            if !seen.insert(q) {
                let names: Vec<&str> = seen.iter().map(|x| cx.name(*x)).collect();
                let detail = format!("parent chain from {} loops through {}", cx.name(r), names.join(","));
                cx.fail("loop_freedom", detail);
                break;
            }
            cur = q;
        }
    }
}

fn aw_uniqueness(cx: &mut Ctx<'_>) {
    let sim = cx.sim;
    for l in 0..sim.topo.links.len() {
        let winners = sim.assert_winners(l, cx.tree);
        if winners.len() > 1 {
            let detail = format!("link {} has assert winners {}", sim.topo.links[l].name, winners.join(","));
            cx.fail("aw_uniqueness", detail);
        }
        for (q, k) in sim.topo.attached(l) {
            if !cx.live(q, k) || !cx.active(q) {
                continue;
            }
            let view = cx.views[q].as_ref().expect("active");
            if view.originator || view.root != Some(k) {
                continue;
            }
            let parent = view.parent.and_then(|(ip, _)| sim.topo.owner_of(ip)).map(|(p, _)| cx.name(p).to_string());
            if winners.len() == 1 && parent.as_ref() != winners.first() {
                let detail = format!(
                    "{}'s parent on {} is {:?} but the assert winner is {}",
                    cx.name(q),
                    sim.topo.links[l].name,
                    parent,
                    winners[0]
                );
                cx.fail("aw_uniqueness", detail);
            }
        }
    }
}

fn mroute_coherence(cx: &mut Ctx<'_>) {
    let sim = cx.sim;
    for r in 0..sim.routers.len() {
        let Some(view) = cx.views[r].clone() else { continue };
        for v in &view.ifaces {
            if !v.forwarding {
                if view.state != TreeState::Active || v.role != Role::NonRoot || !v.is_aw() || v.source_attached {
                    continue;
                }
            } else if view.state != TreeState::Active || v.role == Role::Root || !v.is_aw() {
                let detail = format!("{} forwards on {} without being an ACTIVE assert winner", cx.name(r), v.id);
                cx.fail("mroute_coherence", detail);
                continue;
            }
            let link = sim.topo.routers[r].ifaces[v.id].link;
            let members = sim.link_groups(link).contains(&cx.tree.group);
            let downstream = sim.live_peers(r, v.id).any(|(q, k)| {
                cx.views[q].as_ref().is_some_and(|w| w.state == TreeState::Active && w.root == Some(k) && w.interested)
            });
            let want = !v.source_attached && (members || downstream);
            if v.forwarding != want {
                let detail = format!(
                    "{} {} forwarding={} but members={members} interested downstream={downstream}",
                    cx.name(r),
                    sim.topo.routers[r].ifaces[v.id].name,
                    v.forwarding
                );
                cx.fail("mroute_coherence", detail);
            }
        }
    }
}

fn interest_knowledge(cx: &mut Ctx<'_>) {
    let sim = cx.sim;
    for r in 0..sim.routers.len() {
        let Some(router) = &sim.routers[r] else { continue };
        let Some(view) = cx.views[r].clone() else { continue };
        if view.state != TreeState::Active {
            continue;
        }
        for v in view.ifaces.iter().filter(|v| v.is_aw() && !v.source_attached) {
            for (q, k) in sim.live_peers(r, v.id).collect::<Vec<_>>() {
                let Some(w) = cx.views[q].as_ref() else { continue };
                if w.state != TreeState::Active || w.root != Some(k) {
                    continue;
                }
                let ip = sim.topo.routers[q].ifaces[k].ip;
                let known = router.ifaces[v.id].neighbors.get(&ip).and_then(|n| n.interest.get(&cx.tree)).copied();
                if known != Some(w.interested) {
                    let detail = format!(
                        "{} knows interest {:?} for {}, which is {}",
                        cx.name(r),
                        known,
                        cx.name(q),
                        if w.interested { "interested" } else { "not interested" }
                    );
                    cx.fail("aw_interest_knowledge", detail);
                }
            }
        }
    }
}

fn sync_symmetry(sim: &Simulator, out: &mut Vec<Violation>) {
    for (r, router) in sim.routers.iter().enumerate() {
        let Some(router) = router else { continue };
        for (i, iface) in router.ifaces.iter().enumerate() {
            if !sim.net.live(&sim.topo, r, i) {
                continue;
            }
            for (q, k) in sim.live_peers(r, i) {
                let other = sim.routers[q].as_ref().expect("live peer");
                let (a, b) = (&sim.topo.routers[r], &sim.topo.routers[q]);
                let mine = iface.neighbors.get(&b.ifaces[k].ip);
                let theirs = other.ifaces[k].neighbors.get(&a.ifaces[i].ip);
                let problem = match (mine, theirs) {
                    (Some(m), Some(t)) if m.synced() && t.synced() => {
                        if m.seq.neighbor_boot_time != other.ifaces[k].seq.boot_time {
                            Some("boot time mismatch")
                        } else if m.seq.neighbor_snapshot_sn != t.seq.my_snapshot_sn {
                            Some("snapshot SN mismatch")
                        } else {
                            None
                        }
                    }
                    (Some(_), Some(_)) => Some("not SYNCED on both ends"),
                    _ => Some("adjacency known to one side only"),
                };
                if let Some(p) = problem {
                    let detail = format!("{} {} / {} {}: {p}", a.name, a.ifaces[i].name, b.name, b.ifaces[k].name);
                    out.push(Violation::new("sync_symmetry", detail));
                }
            }
        }
    }
}
