// SPDX-License-Identifier: Apache-2.0

//! Sequence numbers, boot times and checkpoints.
//!
//! Each interface owns one SN space shared by all trees and all message
//! types that need one. Receivers keep the freshest SN per neighbor per tree
//! and compact that table with the neighbor's CheckpointSN.

use crate::types::{BootTime, Sn, Time, TreeRef};
use std::collections::{BTreeMap, BTreeSet};

/// Freshness stamp; compares by boot time first, then SN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeqStamp {
    pub boot_time: BootTime,
    pub sn: Sn,
}

impl SeqStamp {
    pub fn new(boot_time: BootTime, sn: Sn) -> Self {
        Self { boot_time, sn }
    }
}

/// True iff `a` is strictly fresher than `b`.
pub fn fresher(a: SeqStamp, b: SeqStamp) -> bool {
    a > b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Accept,
    Stale,
    RequiresSync,
}

/// What a router remembers about one neighbor's sequencing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeighborSeqState {
    pub neighbor_boot_time: BootTime,
    /// Zero until the neighbor's Sync has been seen.
    pub neighbor_snapshot_sn: Sn,
    pub my_snapshot_sn: Sn,
    pub checkpoint_sn_in: Sn,
    pub per_tree_sn: BTreeMap<TreeRef, Sn>,
}

impl NeighborSeqState {
    pub fn new(neighbor_boot_time: BootTime) -> Self {
        Self { neighbor_boot_time, ..Default::default() }
    }

    /// SNs at or below this value are stale for every tree.
    pub fn floor(&self) -> Sn {
        self.neighbor_snapshot_sn.max(self.checkpoint_sn_in)
    }

    pub fn effective_sn(&self, tree: TreeRef) -> Sn {
        self.per_tree_sn.get(&tree).copied().unwrap_or(0).max(self.floor())
    }

    /// Classifies a message and records its SN when accepted.
    pub fn classify_incoming(&mut self, tree: TreeRef, stamp: SeqStamp) -> Classification {
        if stamp.boot_time > self.neighbor_boot_time {
            return Classification::RequiresSync;
        }
        if stamp.boot_time < self.neighbor_boot_time || stamp.sn <= self.effective_sn(tree) {
            return Classification::Stale;
        }
        self.per_tree_sn.insert(tree, stamp.sn);
        Classification::Accept
    }

    /// Whether a message with this stamp should be acknowledged. An SN equal
    /// to the stored one is re-acknowledged so lost ACKs are repaired.
    pub fn should_ack(&self, tree: TreeRef, stamp: SeqStamp) -> bool {
        stamp.boot_time == self.neighbor_boot_time
            && stamp.sn > self.floor()
            && stamp.sn >= self.per_tree_sn.get(&tree).copied().unwrap_or(0)
    }

    /// Raises the checkpoint and drops per-tree entries it covers.
    /// Older checkpoints are ignored.
    pub fn apply_checkpoint(&mut self, checkpoint: Sn) {
        if checkpoint < self.checkpoint_sn_in {
            return;
        }
        self.checkpoint_sn_in = checkpoint;
        self.per_tree_sn.retain(|_, sn| *sn > checkpoint);
    }
}

/// The sending side of one interface's SN space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterfaceSeqState {
    pub boot_time: BootTime,
    pub interface_sn: Sn,
    pub max_sn: Sn,
    /// SNs handed out whose transmissions are not yet resolved.
    outstanding: BTreeSet<Sn>,
    checkpoint_sn_out: Sn,
}

impl InterfaceSeqState {
    /// Boot times are at least `now + 1` so zero stays free for "unknown".
    pub fn new(now: Time, max_sn: Sn) -> Self {
        Self {
            boot_time: now + 1,
            interface_sn: 0,
            max_sn: max_sn.max(1),
            outstanding: BTreeSet::new(),
            checkpoint_sn_out: 0,
        }
    }

    /// Returns the next SN and whether the space wrapped. On wrap the boot
    /// time strictly increases and the SN restarts at 1; neighbors notice the
    /// new boot time and resynchronise.
    pub fn allocate_sn(&mut self, now: Time) -> (Sn, bool) {
        if self.interface_sn >= self.max_sn {
            self.boot_time = (now + 1).max(self.boot_time + 1);
            self.interface_sn = 1;
            self.outstanding.clear();
            self.checkpoint_sn_out = 0;
            return (1, true);
        }
        self.interface_sn += 1;
        (self.interface_sn, false)
    }

    /// Marks an allocated SN as awaiting acknowledgement.
    pub fn hold(&mut self, sn: Sn) {
        self.outstanding.insert(sn);
    }

    /// Marks an SN as acknowledged by everyone or superseded.
    pub fn resolve(&mut self, sn: Sn) {
        self.outstanding.remove(&sn);
    }

    /// Largest SN such that it and every lower SN are resolved.
    pub fn checkpoint_sn_out(&mut self) -> Sn {
        let candidate = match self.outstanding.iter().next() {
            Some(&lowest) => lowest - 1,
            None => self.interface_sn,
        };
        self.checkpoint_sn_out = self.checkpoint_sn_out.max(candidate);
        self.checkpoint_sn_out
    }

    pub fn stamp(&self, sn: Sn) -> SeqStamp {
        SeqStamp::new(self.boot_time, sn)
    }
}
