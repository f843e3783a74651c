// SPDX-License-Identifier: Apache-2.0

//! Reliable delivery of tree and interest messages.
//!
//! Every such message waits for an ACK from each neighbor it addresses and
//! is retransmitted until acknowledged, superseded, or the neighbor is gone.
//! There is no attempt cap.

use crate::seq::NeighborSeqState;
use crate::types::{BootTime, Sn, Time, TreeRef};
use crate::wire::{Ack, Body, Message};
use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pending {
    pub sn: Sn,
    pub tree: TreeRef,
    pub msg: Message,
    pub awaiting: BTreeSet<Ipv4Addr>,
    /// Set for interest messages, which address a single neighbor.
    pub unicast: Option<Ipv4Addr>,
    pub deadline: Time,
}

impl Pending {
    fn is_iam_upstream(&self) -> bool {
        matches!(self.msg.body, Body::IamUpstream(_))
    }
}

/// Outstanding transmissions of one interface, keyed by SN.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReliableTx {
    pending: BTreeMap<Sn, Pending>,
}

impl ReliableTx {
    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pending> {
        self.pending.values()
    }

    /// Adds a multicast tree message. Older entries for the same tree are
    /// superseded; an IamUpstream also supersedes older interest messages.
    /// Returns the SNs that became resolved.
    pub fn add_upstream(&mut self, p: Pending) -> Vec<Sn> {
        let tree = p.tree;
        let sn = p.sn;
        let also_interest = p.is_iam_upstream();
        let stale: Vec<Sn> = self
            .pending
            .values()
            .filter(|o| o.tree == tree && o.sn < sn && (o.unicast.is_none() || also_interest))
            .map(|o| o.sn)
            .collect();
        for s in &stale {
            self.pending.remove(s);
        }
        self.insert(p, stale)
    }

    /// Adds an interest message. Older messages of the same tree no longer
    /// need to reach its target. Returns the SNs that became resolved.
    pub fn add_interest(&mut self, p: Pending) -> Vec<Sn> {
        let target = p.unicast.expect("interest messages are unicast");
        let (tree, sn) = (p.tree, p.sn);
        let mut resolved = self.forget_where(target, |o| o.tree == tree && o.sn < sn);
        resolved.extend(self.insert(p, Vec::new()));
        resolved
    }

    fn insert(&mut self, p: Pending, mut resolved: Vec<Sn>) -> Vec<Sn> {
        if p.awaiting.is_empty() {
            resolved.push(p.sn);
        } else {
            self.pending.insert(p.sn, p);
        }
        resolved
    }

    fn forget_where(&mut self, neighbor: Ipv4Addr, pred: impl Fn(&Pending) -> bool) -> Vec<Sn> {
        let mut resolved = Vec::new();
        self.pending.retain(|sn, p| {
            if pred(p) {
                p.awaiting.remove(&neighbor);
            }
            if p.awaiting.is_empty() {
                resolved.push(*sn);
                false
            } else {
                true
            }
        });
        resolved
    }

    /// Records an accepted ACK.
    pub fn ack(&mut self, neighbor: Ipv4Addr, tree: TreeRef, sn: Sn) -> Vec<Sn> {
        self.forget_where(neighbor, |p| p.sn == sn && p.tree == tree)
    }

    pub fn drop_neighbor(&mut self, neighbor: Ipv4Addr) -> Vec<Sn> {
        self.forget_where(neighbor, |_| true)
    }

    /// Entries older than a new SnapshotSN are covered by the snapshot.
    pub fn cancel_below(&mut self, neighbor: Ipv4Addr, snapshot_sn: Sn) -> Vec<Sn> {
        self.forget_where(neighbor, |p| p.sn < snapshot_sn)
    }

    pub fn clear(&mut self) -> Vec<Sn> {
        std::mem::take(&mut self.pending).into_keys().collect()
    }

    /// Entries whose timer fired, with the neighbors still owing an ACK.
    /// Their timers are re-armed.
    pub fn due(&mut self, now: Time, rto: Time) -> Vec<(Message, Vec<Ipv4Addr>)> {
        let mut out = Vec::new();
        for p in self.pending.values_mut() {
            if p.deadline <= now {
                p.deadline = now + rto;
                out.push((p.msg.clone(), p.awaiting.iter().copied().collect()));
            }
        }
        out
    }

    pub fn next_deadline(&self) -> Option<Time> {
        self.pending.values().map(|p| p.deadline).min()
    }
}

/// Builds the ACK for a message received from a neighbor.
pub fn build_ack(my_bt: BootTime, nbr: &NeighborSeqState, tree: TreeRef, sn: Sn) -> Message {
    Message {
        boot_time: my_bt,
        body: Body::Ack(Ack {
            neighbor_sn: sn,
            tree,
            neighbor_boot_time: nbr.neighbor_boot_time,
            neighbor_snapshot_sn: nbr.neighbor_snapshot_sn,
            my_snapshot_sn: nbr.my_snapshot_sn,
        }),
    }
}

/// An ACK counts only if every echoed identifier matches the current
/// synchronisation period on both sides.
pub fn ack_matches(ack: &Ack, sender_bt: BootTime, my_bt: BootTime, nbr: &NeighborSeqState) -> bool {
    sender_bt == nbr.neighbor_boot_time
        && ack.neighbor_boot_time == my_bt
        && ack.neighbor_snapshot_sn == nbr.my_snapshot_sn
        && ack.my_snapshot_sn == nbr.neighbor_snapshot_sn
        && nbr.my_snapshot_sn != 0
        && nbr.neighbor_snapshot_sn != 0
}
