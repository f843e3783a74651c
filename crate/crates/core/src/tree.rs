// SPDX-License-Identifier: Apache-2.0

//! Broadcast tree maintenance.
//!
//! The tree state of a router is a pure function of its unicast route to the
//! source, whether it originates the tree, and which neighbors currently
//! declare themselves UPSTREAM:
//!
//! | state    | condition                                                   |
//! |----------|-------------------------------------------------------------|
//! | ACTIVE   | originator with a live source, or a feasible parent exists  |
//! | UNSURE   | not ACTIVE, but some neighbor is UPSTREAM                   |
//! | INACTIVE | no UPSTREAM neighbor at all                                 |
//!
//! [`compute_view`] evaluates that function together with the per-interface
//! assert election; [`upstream_actions`] turns the difference between two
//! views into IamUpstream / IamNoLongerUpstream transmissions.

use crate::interest::downstream_interest;
use crate::types::{beats, AwView, IfId, Metric, Role, TreeState};
use serde::Serialize;
use std::net::Ipv4Addr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborInput {
    pub ip: Ipv4Addr,
    /// Metric announced in the neighbor's last IamUpstream, if UPSTREAM.
    pub upstream: Option<Metric>,
    /// Last interest reported by the neighbor, if recorded.
    pub interest: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IfaceInput {
    pub id: IfId,
    pub ip: Ipv4Addr,
    /// The interface sits on the source's subnet.
    pub source_attached: bool,
    pub members: bool,
    /// Synchronised neighbors only.
    pub neighbors: Vec<NeighborInput>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeInputs {
    pub root: Option<IfId>,
    pub rpc: Metric,
    /// Originators only: data from the source arrived within the SAT.
    pub source_active: bool,
    pub ifaces: Vec<IfaceInput>,
    pub initial_di: bool,
    /// Parent candidates must announce a strictly better metric.
    pub feasibility: bool,
}

impl TreeInputs {
    pub fn is_originator(&self) -> bool {
        self.root.and_then(|r| self.ifaces.iter().find(|i| i.id == r)).is_some_and(|i| i.source_attached)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IfaceView {
    pub id: IfId,
    pub ip: Ipv4Addr,
    pub role: Role,
    pub source_attached: bool,
    pub aw: AwView,
    pub best_upstream: Option<(Ipv4Addr, Metric)>,
    pub di: bool,
    pub forwarding: bool,
}

impl IfaceView {
    pub fn is_aw(&self) -> bool {
        self.role == Role::NonRoot && self.aw == AwView::Myself
    }

    /// Interfaces that may carry tree control messages.
    pub fn may_signal(&self) -> bool {
        !self.source_attached
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreeView {
    pub state: TreeState,
    pub root: Option<IfId>,
    pub rpc: Metric,
    pub originator: bool,
    pub parent: Option<(Ipv4Addr, Metric)>,
    pub ifaces: Vec<IfaceView>,
    pub interested: bool,
}

impl TreeView {
    /// View of a tree the router holds no state for.
    pub fn empty() -> Self {
        Self {
            state: TreeState::Inactive,
            root: None,
            rpc: Metric::INFINITE,
            originator: false,
            parent: None,
            ifaces: Vec::new(),
            interested: false,
        }
    }

    pub fn iface(&self, id: IfId) -> Option<&IfaceView> {
        self.ifaces.iter().find(|i| i.id == id)
    }

    pub fn non_root(&self) -> impl Iterator<Item = &IfaceView> {
        self.ifaces.iter().filter(|i| i.role == Role::NonRoot)
    }

    pub fn forwarding_set(&self) -> Vec<IfId> {
        self.ifaces.iter().filter(|i| i.forwarding).map(|i| i.id).collect()
    }
}

fn best_upstream(neighbors: &[NeighborInput]) -> Option<(Ipv4Addr, Metric)> {
    neighbors
        .iter()
        .filter_map(|n| n.upstream.map(|m| (m, n.ip)))
        .reduce(|best, c| if beats(c, best) { c } else { best })
        .map(|(m, ip)| (ip, m))
}

/// Parent: the best UPSTREAM neighbor on the root interface whose metric is
/// strictly lower than ours when feasibility is enforced.
pub fn select_parent(inputs: &TreeInputs) -> Option<(Ipv4Addr, Metric)> {
    let root = inputs.root?;
    let iface = inputs.ifaces.iter().find(|i| i.id == root)?;
    let feasible: Vec<NeighborInput> = iface
        .neighbors
        .iter()
        .filter(|n| n.upstream.is_some_and(|m| !inputs.feasibility || m < inputs.rpc))
        .cloned()
        .collect();
    best_upstream(&feasible)
}

/// Assert election on a non-root interface.
pub fn elect_assert_winner(state: TreeState, my: (Metric, Ipv4Addr), best: Option<(Ipv4Addr, Metric)>) -> bool {
    match state {
        TreeState::Active => best.is_none_or(|(ip, m)| beats(my, (m, ip))),
        TreeState::Unsure => best.is_none(),
        TreeState::Inactive => true,
    }
}

pub fn compute_view(inputs: &TreeInputs) -> TreeView {
    let originator = inputs.is_originator();
    let any_upstream = inputs.ifaces.iter().any(|i| i.neighbors.iter().any(|n| n.upstream.is_some()));
    let parent = if originator { None } else { select_parent(inputs) };
    let state = if (originator && inputs.source_active) || parent.is_some() {
        TreeState::Active
    } else if any_upstream {
        TreeState::Unsure
    } else {
        TreeState::Inactive
    };
    let ifaces: Vec<IfaceView> = inputs
        .ifaces
        .iter()
        .map(|i| {
            let best = best_upstream(&i.neighbors);
            if Some(i.id) == inputs.root {
                return IfaceView {
                    id: i.id,
                    ip: i.ip,
                    role: Role::Root,
                    source_attached: i.source_attached,
                    aw: best.map_or(AwView::Nobody, |(ip, _)| AwView::Neighbor(ip)),
                    best_upstream: best,
                    di: false,
                    forwarding: false,
                };
            }
            let aw = if elect_assert_winner(state, (inputs.rpc, i.ip), best) {
                AwView::Myself
            } else {
                AwView::Neighbor(best.expect("AL implies an UPSTREAM neighbor").0)
            };
            let di = downstream_interest(i, state == TreeState::Active, inputs.initial_di);
            IfaceView {
                id: i.id,
                ip: i.ip,
                role: Role::NonRoot,
                source_attached: i.source_attached,
                aw,
                best_upstream: best,
                di,
                forwarding: state == TreeState::Active && aw == AwView::Myself && di && !i.source_attached,
            }
        })
        .collect();
    let interested = ifaces.iter().any(|i| i.forwarding);
    TreeView { state, root: inputs.root, rpc: inputs.rpc, originator, parent, ifaces, interested }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpstreamKind {
    IamUpstream,
    IamNoLongerUpstream,
}

/// Upstream messages implied by moving from `old` to `new`.
///
/// Interfaces absent from `old` were just added; they learn the tree through
/// synchronisation instead.
pub fn upstream_actions(old: &TreeView, new: &TreeView) -> Vec<(IfId, UpstreamKind)> {
    use UpstreamKind::*;
    let was_active = old.state == TreeState::Active;
    let is_active = new.state == TreeState::Active;
    let was_non_root = |id: IfId| old.iface(id).is_some_and(|i| i.role == Role::NonRoot);
    let existed = |id: IfId| old.iface(id).is_some();
    let mut out = Vec::new();
    match (was_active, is_active) {
        (false, true) => {
            out.extend(new.non_root().filter(|i| i.may_signal()).map(|i| (i.id, IamUpstream)));
        }
        (true, false) => {
            out.extend(
                old.non_root()
                    .filter(|i| i.may_signal() && new.iface(i.id).is_some())
                    .map(|i| (i.id, IamNoLongerUpstream)),
            );
        }
        (true, true) => {
            let rpc_changed = old.rpc != new.rpc;
            if old.root != new.root {
                if let Some(r) = new.root {
                    if was_non_root(r) && new.iface(r).is_some_and(|i| i.may_signal()) {
                        out.push((r, IamNoLongerUpstream));
                    }
                }
                out.extend(
                    new.non_root()
                        .filter(|i| i.may_signal() && existed(i.id))
                        .filter(|i| !was_non_root(i.id) || rpc_changed)
                        .map(|i| (i.id, IamUpstream)),
                );
            } else if rpc_changed {
                out.extend(new.non_root().filter(|i| i.may_signal()).map(|i| (i.id, IamUpstream)));
            }
        }
        (false, false) => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(n: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 0, n)
    }

    fn nb(n: u8, rpc: Option<u32>) -> NeighborInput {
        NeighborInput { ip: ip(n), upstream: rpc.map(|r| Metric::new(0, r)), interest: None }
    }

    fn iface(id: IfId, me: u8, neighbors: Vec<NeighborInput>) -> IfaceInput {
        IfaceInput { id, ip: ip(me), source_attached: false, members: false, neighbors }
    }

    fn inputs(rpc: u32, ifaces: Vec<IfaceInput>) -> TreeInputs {
        TreeInputs {
            root: Some(0),
            rpc: Metric::new(0, rpc),
            source_active: false,
            ifaces,
            initial_di: false,
            feasibility: true,
        }
    }

    #[test]
    fn infeasible_upstream_leaves_router_unsure() {
        let i = inputs(20, vec![iface(0, 2, vec![nb(9, Some(30))])]);
        let v = compute_view(&i);
        assert_eq!(v.state, TreeState::Unsure);
        assert_eq!(v.parent, None);
        let off = TreeInputs { feasibility: false, ..i };
        assert_eq!(compute_view(&off).state, TreeState::Active);
    }

    #[test]
    fn parent_ties_go_to_higher_address() {
        let i = inputs(30, vec![iface(0, 2, vec![nb(5, Some(10)), nb(7, Some(10))])]);
        assert_eq!(select_parent(&i).unwrap().0, ip(7));
    }

    #[test]
    fn assert_election_by_state() {
        let me = (Metric::new(0, 20), ip(3));
        let best = Some((ip(4), Metric::new(0, 20)));
        assert!(!elect_assert_winner(TreeState::Active, me, best));
        assert!(elect_assert_winner(TreeState::Active, (Metric::new(0, 19), ip(3)), best));
        assert!(!elect_assert_winner(TreeState::Unsure, me, best));
        assert!(elect_assert_winner(TreeState::Unsure, me, None));
        assert!(elect_assert_winner(TreeState::Inactive, me, None));
    }

    #[test]
    fn becoming_active_announces_on_non_root_only() {
        let i = inputs(20, vec![iface(0, 2, vec![nb(1, Some(10))]), iface(1, 3, vec![])]);
        let acts = upstream_actions(&TreeView::empty(), &compute_view(&i));
        assert_eq!(acts, vec![(1, UpstreamKind::IamUpstream)]);
    }
}
