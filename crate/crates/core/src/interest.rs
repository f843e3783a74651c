// SPDX-License-Identifier: Apache-2.0

//! Interest propagation.
//!
//! A non-root interface forwards iff it is the Assert Winner, has downstream
//! interest and is not attached to the source subnet. The router is
//! interested iff any non-root interface forwards. Interest is unicast to the
//! Assert Winner of the link, which is the only interface that must keep it
//! complete.

use crate::tree::{IfaceInput, TreeView};
use crate::types::{AwView, IfId, Role, TreeState};
use std::net::Ipv4Addr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterestKind {
    Interest,
    NoInterest,
}

/// Downstream interest of a non-root interface. Interest records are only
/// meaningful while the tree is ACTIVE; otherwise the configured default
/// stands in for every non-UPSTREAM neighbor.
pub fn downstream_interest(iface: &IfaceInput, active: bool, initial_di: bool) -> bool {
    if iface.source_attached {
        return false;
    }
    iface.members
        || iface
            .neighbors
            .iter()
            .any(|n| n.upstream.is_none() && if active { n.interest.unwrap_or(initial_di) } else { initial_di })
}

/// Interest messages implied by moving from `old` to `new`.
///
/// `iam_upstream_from` names an interface and neighbor whose IamUpstream was
/// just processed; when that neighbor stays Assert Winner it is told again.
pub fn interest_actions(
    old: &TreeView,
    new: &TreeView,
    iam_upstream_from: Option<(IfId, Ipv4Addr)>,
) -> Vec<(IfId, InterestKind, Ipv4Addr)> {
    let mut out = Vec::new();
    if new.state == TreeState::Inactive {
        return out;
    }
    let old_aw = |id: IfId| old.iface(id).map(|i| i.aw);
    let repeated =
        |id: IfId, n: Ipv4Addr| iam_upstream_from == Some((id, n)) && old_aw(id) == Some(AwView::Neighbor(n));
    for i in &new.ifaces {
        let AwView::Neighbor(aw) = i.aw else { continue };
        if !i.may_signal() {
            continue;
        }
        let aw_changed = old_aw(i.id) != Some(AwView::Neighbor(aw));
        match i.role {
            Role::Root => {
                let root_changed = old.root != Some(i.id);
                if old.interested != new.interested || aw_changed || root_changed || repeated(i.id, aw) {
                    let kind = if new.interested { InterestKind::Interest } else { InterestKind::NoInterest };
                    out.push((i.id, kind, aw));
                }
            }
            Role::NonRoot if new.state != TreeState::Active => {
                let was_root = old.iface(i.id).is_some_and(|o| o.role == Role::Root);
                // Leaving ACTIVE turns this interface NOT UPSTREAM at the AW,
                // which then needs an explicit interest value for it.
                let left_active = old.state == TreeState::Active;
                if aw_changed || was_root || left_active || repeated(i.id, aw) {
                    out.push((i.id, InterestKind::NoInterest, aw));
                }
            }
            Role::NonRoot => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{compute_view, NeighborInput, TreeInputs};
    use crate::types::Metric;

    fn ip(n: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 0, n)
    }

    fn view(upstream_rpc: Option<u32>, members: bool) -> TreeView {
        compute_view(&TreeInputs {
            root: Some(0),
            rpc: Metric::new(0, 20),
            source_active: false,
            ifaces: vec![
                IfaceInput {
                    id: 0,
                    ip: ip(2),
                    source_attached: false,
                    members: false,
                    neighbors: vec![NeighborInput {
                        ip: ip(1),
                        upstream: upstream_rpc.map(|r| Metric::new(0, r)),
                        interest: None,
                    }],
                },
                IfaceInput { id: 1, ip: ip(3), source_attached: false, members, neighbors: vec![] },
            ],
            initial_di: false,
            feasibility: true,
        })
    }

    #[test]
    fn new_aw_on_root_receives_interest() {
        let acts = interest_actions(&TreeView::empty(), &view(Some(10), true), None);
        assert_eq!(acts, vec![(0, InterestKind::Interest, ip(1))]);
    }

    #[test]
    fn unchanged_aw_is_told_again_after_iam_upstream() {
        let v = view(Some(10), false);
        assert!(interest_actions(&v, &v, None).is_empty());
        assert_eq!(interest_actions(&v, &v, Some((0, ip(1)))), vec![(0, InterestKind::NoInterest, ip(1))]);
    }

    #[test]
    fn membership_change_flips_interest() {
        let acts = interest_actions(&view(Some(10), false), &view(Some(10), true), None);
        assert_eq!(acts, vec![(0, InterestKind::Interest, ip(1))]);
    }

    #[test]
    fn inactive_router_sends_nothing() {
        assert!(interest_actions(&TreeView::empty(), &view(None, true), None).is_empty());
    }
}
