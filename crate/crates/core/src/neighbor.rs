// SPDX-License-Identifier: Apache-2.0

//! Neighbor records and the snapshot exchange that synchronises them.
//!
//! The exchange is a stop-and-wait dialogue driven by the Master. Message
//! `k` of each side carries that side's fragment `k`, if any. A side keeps
//! its More flag set until every fragment it sent has been acknowledged by
//! the next message from the peer. Both sides finish on the first round
//! `k > 0` in which neither sets More.

use crate::seq::NeighborSeqState;
use crate::types::{Metric, SyncState, Time, TreeRef};
use crate::wire::SyncTree;
use std::collections::BTreeMap;
use std::net::Ipv4Addr;

/// Everything known about one neighbor on one interface. A missing record
/// means the neighbor is UNKNOWN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborRecord {
    pub ip: Ipv4Addr,
    pub sync_state: SyncState,
    pub seq: NeighborSeqState,
    pub liveness_deadline: Time,
    pub upstream: BTreeMap<TreeRef, Metric>,
    pub interest: BTreeMap<TreeRef, bool>,
    pub session: Option<SyncSession>,
}

impl NeighborRecord {
    pub fn new(ip: Ipv4Addr, boot_time: u64, liveness_deadline: Time) -> Self {
        Self {
            ip,
            sync_state: SyncState::Unknown,
            seq: NeighborSeqState::new(boot_time),
            liveness_deadline,
            upstream: BTreeMap::new(),
            interest: BTreeMap::new(),
            session: None,
        }
    }

    pub fn synced(&self) -> bool {
        self.sync_state == SyncState::Synced
    }

    /// Trees this neighbor holds any state for.
    pub fn trees(&self) -> impl Iterator<Item = TreeRef> + '_ {
        self.upstream.keys().chain(self.interest.keys()).copied()
    }

    /// Drops per-tree state learned before the neighbor's snapshot.
    pub fn forget_before_snapshot(&mut self) {
        let ssn = self.seq.neighbor_snapshot_sn;
        let old: Vec<TreeRef> = self
            .upstream
            .keys()
            .chain(self.interest.keys())
            .filter(|t| self.seq.per_tree_sn.get(t).is_none_or(|sn| *sn < ssn))
            .copied()
            .collect();
        for t in old {
            self.upstream.remove(&t);
            self.interest.remove(&t);
        }
        self.seq.per_tree_sn.retain(|_, sn| *sn > ssn);
    }

    /// Installs the received snapshot. Trees with information fresher than
    /// the snapshot keep it.
    pub fn install_snapshot(&mut self, trees: &[SyncTree]) {
        let ssn = self.seq.neighbor_snapshot_sn;
        for t in trees {
            if self.seq.per_tree_sn.get(&t.tree).is_some_and(|sn| *sn > ssn) {
                continue;
            }
            self.upstream.insert(t.tree, t.metric);
            self.interest.remove(&t.tree);
        }
    }
}

/// One side's view of an in-progress snapshot exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncSession {
    pub i_am_master: bool,
    pub snapshot: Vec<SyncTree>,
    pub fragment_size: usize,
    /// Master: SyncSN of the message in flight. Slave: last SyncSN answered.
    pub sync_sn: Option<u16>,
    pub awaiting_reply: bool,
    pub received: Vec<SyncTree>,
    pub attempts_left: u32,
    pub deadline: Option<Time>,
    pub finished: bool,
}

/// A Sync body without the identifiers the router fills in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncStep {
    pub sync_sn: u16,
    pub more: bool,
    pub trees: Vec<SyncTree>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MasterAction {
    Send(SyncStep),
    Done,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlaveAction {
    /// Answer; `done` means the exchange completes after this reply.
    Reply {
        step: SyncStep,
        done: bool,
    },
    /// The Master repeated the last message; repeat the last answer.
    Resend(SyncStep),
    Ignore,
}

impl SyncSession {
    pub fn new(i_am_master: bool, snapshot: Vec<SyncTree>, fragment_size: usize, attempts: u32) -> Self {
        Self {
            i_am_master,
            snapshot,
            fragment_size: fragment_size.max(1),
            sync_sn: None,
            awaiting_reply: false,
            received: Vec::new(),
            attempts_left: attempts,
            deadline: None,
            finished: false,
        }
    }

    pub fn fragments(&self) -> usize {
        self.snapshot.len().div_ceil(self.fragment_size)
    }

    /// This side's message for round `k`.
    pub fn step(&self, k: u16) -> SyncStep {
        let k = k as usize;
        let trees = self.snapshot.chunks(self.fragment_size).nth(k).map(<[SyncTree]>::to_vec).unwrap_or_default();
        SyncStep { sync_sn: k as u16, more: k < self.fragments(), trees }
    }

    /// Master: first message.
    pub fn master_start(&mut self) -> SyncStep {
        self.sync_sn = Some(0);
        self.awaiting_reply = true;
        self.step(0)
    }

    /// Master: the current message, for retransmission.
    pub fn master_current(&self) -> Option<SyncStep> {
        self.sync_sn.filter(|_| self.awaiting_reply && !self.finished).map(|k| self.step(k))
    }

    /// Master: a reply from the Slave.
    pub fn master_on_reply(&mut self, k: u16, slave_more: bool, trees: &[SyncTree]) -> MasterAction {
        if self.finished || !self.awaiting_reply || self.sync_sn != Some(k) {
            return MasterAction::Ignore;
        }
        self.awaiting_reply = false;
        self.received.extend_from_slice(trees);
        let my_more = self.step(k).more;
        if !my_more && !slave_more && k > 0 {
            self.finished = true;
            return MasterAction::Done;
        }
        let next = k + 1;
        self.sync_sn = Some(next);
        self.awaiting_reply = true;
        MasterAction::Send(self.step(next))
    }

    /// Slave: a message from the Master.
    pub fn slave_on_master(&mut self, k: u16, master_more: bool, trees: &[SyncTree]) -> SlaveAction {
        if self.sync_sn == Some(k) {
            return SlaveAction::Resend(self.step(k));
        }
        if self.finished || k != self.sync_sn.map_or(0, |l| l + 1) {
            return SlaveAction::Ignore;
        }
        self.received.extend_from_slice(trees);
        self.sync_sn = Some(k);
        let step = self.step(k);
        let done = !master_more && !step.more && k > 0;
        self.finished = done;
        SlaveAction::Reply { step, done }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trees(n: u8) -> Vec<SyncTree> {
        (0..n)
            .map(|i| SyncTree {
                tree: TreeRef::new(Ipv4Addr::new(10, 0, 0, i), Ipv4Addr::new(232, 0, 0, 1)),
                metric: Metric::new(0, 10),
            })
            .collect()
    }

    /// Drives both sides to completion and returns (sync_sn, more, trees) per message.
    fn run(master: usize, slave: usize, fragment: usize) -> Vec<(bool, u16, bool, usize)> {
        let mut m = SyncSession::new(true, trees(master as u8), fragment, 5);
        let mut s = SyncSession::new(false, trees(slave as u8), fragment, 5);
        let mut log = Vec::new();
        let mut out = m.master_start();
        loop {
            log.push((true, out.sync_sn, out.more, out.trees.len()));
            let SlaveAction::Reply { step, done } = s.slave_on_master(out.sync_sn, out.more, &out.trees) else {
                panic!("slave did not reply")
            };
            log.push((false, step.sync_sn, step.more, step.trees.len()));
            match m.master_on_reply(step.sync_sn, step.more, &step.trees) {
                MasterAction::Send(next) => {
                    assert!(!done);
                    out = next;
                }
                MasterAction::Done => {
                    assert!(done);
                    assert_eq!(m.received.len(), slave);
                    assert_eq!(s.received.len(), master);
                    return log;
                }
                MasterAction::Ignore => panic!("master ignored reply"),
            }
        }
    }

    #[test]
    fn empty_snapshots_need_two_rounds() {
        assert_eq!(
            run(0, 0, 3),
            vec![(true, 0, false, 0), (false, 0, false, 0), (true, 1, false, 0), (false, 1, false, 0)]
        );
    }

    #[test]
    fn slave_with_more_fragments_extends_the_dialogue() {
        let log = run(1, 7, 3);
        assert_eq!(log.last().unwrap(), &(false, 3, false, 0));
    }

    #[test]
    fn repeated_master_message_gets_the_same_answer() {
        let mut s = SyncSession::new(false, trees(2), 1, 5);
        let first = s.slave_on_master(0, true, &trees(1));
        let SlaveAction::Reply { step, .. } = first else { panic!() };
        assert_eq!(s.slave_on_master(0, true, &trees(1)), SlaveAction::Resend(step));
        assert_eq!(s.received.len(), 1);
        assert_eq!(s.slave_on_master(5, true, &[]), SlaveAction::Ignore);
    }
}
