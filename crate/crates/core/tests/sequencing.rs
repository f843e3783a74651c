// SPDX-License-Identifier: Apache-2.0

//! Freshness, checkpoints and reliable delivery, below the router.

use hpim_core::reliable::{ack_matches, build_ack, Pending, ReliableTx};
use hpim_core::seq::{fresher, Classification, InterfaceSeqState, NeighborSeqState, SeqStamp};
use hpim_core::wire::{Ack, Body, Message, TreeMsg, Upstream};
use hpim_core::{Metric, Sn, TreeRef};
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::net::Ipv4Addr;

fn tree(g: u8) -> TreeRef {
    TreeRef::new(Ipv4Addr::new(10, 1, 0, 100), Ipv4Addr::new(232, 1, 1, g))
}

fn nbr(n: u8) -> Ipv4Addr {
    Ipv4Addr::new(10, 1, 1, n)
}

fn s(bt: u64, sn: Sn) -> SeqStamp {
    SeqStamp::new(bt, sn)
}

#[test]
fn freshness_orders_boot_time_before_sn() {
    assert!(!fresher(s(1, 5), s(1, 5)));
    assert!(fresher(s(1, 8), s(1, 7)));
    assert!(!fresher(s(1, 7), s(1, 8)));
    assert!(fresher(s(2, 1), s(1, 1001)));
    assert!(!fresher(s(1, 1001), s(2, 1)));
}

#[test]
fn older_or_equal_sn_is_stale() {
    let mut st = NeighborSeqState::new(1);
    st.per_tree_sn.insert(tree(1), 9);
    assert_eq!(st.classify_incoming(tree(1), s(1, 3)), Classification::Stale);
    assert_eq!(st.classify_incoming(tree(1), s(1, 9)), Classification::Stale);
    assert_eq!(st.classify_incoming(tree(1), s(1, 10)), Classification::Accept);
    assert_eq!(st.per_tree_sn[&tree(1)], 10);
}

#[test]
fn sns_are_compared_per_tree() {
    let mut st = NeighborSeqState::new(1);
    assert_eq!(st.classify_incoming(tree(1), s(1, 3)), Classification::Accept);
    assert_eq!(st.classify_incoming(tree(2), s(1, 2)), Classification::Accept);
    assert_eq!(st.per_tree_sn, BTreeMap::from([(tree(1), 3), (tree(2), 2)]));
}

#[test]
fn zero_checkpoint_changes_nothing() {
    let mut st = NeighborSeqState::new(1);
    st.per_tree_sn.insert(tree(1), 4);
    st.per_tree_sn.insert(tree(2), 1);
    let before = st.clone();
    st.apply_checkpoint(0);
    assert_eq!(st, before);
}

#[test]
fn checkpoint_never_moves_back() {
    let mut st = NeighborSeqState::new(1);
    st.apply_checkpoint(40);
    st.apply_checkpoint(12);
    assert_eq!(st.checkpoint_sn_in, 40);
    assert_eq!(st.classify_incoming(tree(9), s(1, 40)), Classification::Stale);
}

#[test]
fn equal_sn_is_acked_again_but_not_below_the_floor() {
    let mut st = NeighborSeqState::new(1);
    assert_eq!(st.classify_incoming(tree(1), s(1, 6)), Classification::Accept);
    assert!(st.should_ack(tree(1), s(1, 6)));
    assert!(!st.should_ack(tree(1), s(1, 5)));
    st.apply_checkpoint(6);
    assert!(!st.should_ack(tree(1), s(1, 6)));
    assert!(!st.should_ack(tree(1), s(2, 7)));
}

#[test]
fn allocation_continues_from_the_current_sn() {
    let mut st = InterfaceSeqState::new(0, Sn::MAX);
    st.interface_sn = 50;
    assert_eq!(st.allocate_sn(0), (51, false));
    assert_eq!(st.stamp(51), s(st.boot_time, 51));
}

#[test]
fn forced_wrap_restarts_at_one_with_a_later_boot_time() {
    let mut st = InterfaceSeqState::new(5, Sn::MAX);
    st.interface_sn = Sn::MAX;
    let bt = st.boot_time;
    let (sn, wrapped) = st.allocate_sn(5);
    assert_eq!((sn, wrapped), (1, true));
    assert!(st.boot_time > bt);
    assert!(fresher(st.stamp(1), SeqStamp::new(bt, Sn::MAX)));
    assert_eq!(st.checkpoint_sn_out(), 1);
}

proptest! {
    #[test]
    fn checkpoints_filter_like_a_brute_force_scan(
        entries in prop::collection::btree_map(0u8..40, 1u32..200, 0..30),
        cps in prop::collection::vec(0u32..220, 1..5),
    ) {
        let mut st = NeighborSeqState::new(1);
        st.per_tree_sn = entries.iter().map(|(g, sn)| (tree(*g), *sn)).collect();
        for cp in &cps {
            st.apply_checkpoint(*cp);
        }
        let top = *cps.iter().max().unwrap();
        let expect: BTreeMap<TreeRef, Sn> =
            entries.iter().filter(|(_, sn)| **sn > top).map(|(g, sn)| (tree(*g), *sn)).collect();
        prop_assert_eq!(st.checkpoint_sn_in, top);
        prop_assert_eq!(&st.per_tree_sn, &expect);
        for g in 0..40 {
            let kept = expect.get(&tree(g)).copied().unwrap_or(0);
            prop_assert_eq!(st.effective_sn(tree(g)), kept.max(top));
        }
    }

    #[test]
    fn allocated_stamps_strictly_increase(max_sn in 1u32..20, steps in 1usize..100) {
        let mut st = InterfaceSeqState::new(0, max_sn);
        let mut last = SeqStamp::new(0, 0);
        for k in 0..steps {
            let (sn, _) = st.allocate_sn(k as u64);
            let stamp = st.stamp(sn);
            prop_assert!(fresher(stamp, last));
            prop_assert!(sn >= 1 && sn <= max_sn);
            last = stamp;
        }
    }

    #[test]
    fn one_multicast_entry_per_tree(ops in prop::collection::vec((0u8..3, 1u8..4), 1..40)) {
        let mut tx = ReliableTx::default();
        for (sn, (g, n)) in ops.into_iter().enumerate() {
            let p = upstream(sn as Sn + 1, tree(g), &(1..=n).collect::<Vec<_>>());
            tx.add_upstream(p);
        }
        for g in 0..3 {
            prop_assert!(tx.iter().filter(|p| p.tree == tree(g)).count() <= 1);
        }
    }
}

fn upstream(sn: Sn, t: TreeRef, to: &[u8]) -> Pending {
    Pending {
        sn,
        tree: t,
        msg: Message { boot_time: 1, body: Body::IamUpstream(Upstream { sn, tree: t, metric: Metric::new(0, 10) }) },
        awaiting: to.iter().map(|n| nbr(*n)).collect(),
        unicast: None,
        deadline: 0,
    }
}

fn interest(sn: Sn, t: TreeRef, to: u8) -> Pending {
    Pending {
        sn,
        tree: t,
        msg: Message { boot_time: 1, body: Body::Interest(TreeMsg { sn, tree: t }) },
        awaiting: [nbr(to)].into(),
        unicast: Some(nbr(to)),
        deadline: 0,
    }
}

#[test]
fn newer_sn_cancels_the_pending_one() {
    let mut tx = ReliableTx::default();
    tx.add_upstream(upstream(6, tree(1), &[1, 2]));
    assert_eq!(tx.add_upstream(upstream(9, tree(1), &[1, 2])), vec![6]);
    // An ACK for the canceled SN finds nothing.
    assert!(tx.ack(nbr(1), tree(1), 6).is_empty());
    assert_eq!(tx.iter().map(|p| (p.sn, p.awaiting.len())).collect::<Vec<_>>(), vec![(9, 2)]);
}

#[test]
fn other_trees_are_not_superseded() {
    let mut tx = ReliableTx::default();
    tx.add_upstream(upstream(6, tree(1), &[1]));
    assert!(tx.add_upstream(upstream(7, tree(2), &[1])).is_empty());
    assert_eq!(tx.iter().count(), 2);
}

#[test]
fn snapshot_cancels_every_lower_sn_for_that_neighbor() {
    let mut tx = ReliableTx::default();
    tx.add_upstream(upstream(3, tree(1), &[1, 2]));
    tx.add_upstream(upstream(11, tree(2), &[1]));
    tx.add_upstream(upstream(25, tree(3), &[1]));
    assert_eq!(tx.cancel_below(nbr(1), 20), vec![11]);
    let left: Vec<_> = tx.iter().map(|p| (p.sn, p.awaiting.iter().copied().collect::<Vec<_>>())).collect();
    assert_eq!(left, vec![(3, vec![nbr(2)]), (25, vec![nbr(1)])]);
}

#[test]
fn nobody_to_wait_for_completes_at_once() {
    let mut tx = ReliableTx::default();
    assert_eq!(tx.add_upstream(upstream(4, tree(1), &[])), vec![4]);
    assert!(tx.is_empty());
    assert_eq!(tx.next_deadline(), None);
}

#[test]
fn acks_shrink_the_awaiting_set_until_done() {
    let mut tx = ReliableTx::default();
    tx.add_upstream(upstream(4, tree(1), &[1, 2, 3]));
    assert!(tx.ack(nbr(2), tree(1), 4).is_empty());
    assert!(tx.ack(nbr(2), tree(1), 4).is_empty());
    assert!(tx.ack(nbr(1), tree(2), 4).is_empty());
    assert_eq!(tx.iter().next().unwrap().awaiting, [nbr(1), nbr(3)].into());
    assert!(tx.ack(nbr(1), tree(1), 4).is_empty());
    assert_eq!(tx.ack(nbr(3), tree(1), 4), vec![4]);
}

#[test]
fn losing_the_last_silent_neighbor_completes_the_entry() {
    let mut tx = ReliableTx::default();
    tx.add_upstream(upstream(4, tree(1), &[1, 2]));
    tx.add_interest(interest(5, tree(2), 2));
    tx.ack(nbr(1), tree(1), 4);
    let mut done = tx.drop_neighbor(nbr(2));
    done.sort_unstable();
    assert_eq!(done, vec![4, 5]);
}

#[test]
fn retransmissions_address_only_the_silent_neighbors() {
    let mut tx = ReliableTx::default();
    tx.add_upstream(upstream(4, tree(1), &[1, 2]));
    tx.ack(nbr(1), tree(1), 4);
    let due = tx.due(0, 1_000_000);
    assert_eq!(due.len(), 1);
    assert_eq!(due[0].1, vec![nbr(2)]);
    assert!(tx.due(999_999, 1_000_000).is_empty());
    assert_eq!(tx.next_deadline(), Some(1_000_000));
}

#[test]
fn iam_upstream_supersedes_older_interest() {
    let mut tx = ReliableTx::default();
    tx.add_interest(interest(3, tree(1), 1));
    assert_eq!(tx.add_upstream(upstream(4, tree(1), &[1])), vec![3]);
    let mut tx = ReliableTx::default();
    tx.add_interest(interest(3, tree(1), 1));
    let no_longer = Pending {
        msg: Message { boot_time: 1, body: Body::IamNoLongerUpstream(TreeMsg { sn: 4, tree: tree(1) }) },
        ..upstream(4, tree(1), &[1])
    };
    assert!(tx.add_upstream(no_longer).is_empty());
}

fn synced(nbt: u64, my_ssn: Sn, nei_ssn: Sn) -> NeighborSeqState {
    NeighborSeqState { my_snapshot_sn: my_ssn, neighbor_snapshot_sn: nei_ssn, ..NeighborSeqState::new(nbt) }
}

#[test]
fn ack_echoes_the_current_period() {
    let st = synced(7, 20, 47);
    let Message { boot_time, body: Body::Ack(a) } = build_ack(3, &st, tree(1), 21) else { panic!("not an ack") };
    assert_eq!(boot_time, 3);
    let want =
        Ack { neighbor_sn: 21, tree: tree(1), neighbor_boot_time: 7, neighbor_snapshot_sn: 47, my_snapshot_sn: 20 };
    assert_eq!(a, want);
}

#[test]
fn ack_must_match_every_identifier() {
    // Receiver view: my bt 3, neighbor bt 7, my SSN 20, neighbor SSN 47.
    let st = synced(7, 20, 47);
    let good =
        Ack { neighbor_sn: 21, tree: tree(1), neighbor_boot_time: 3, neighbor_snapshot_sn: 20, my_snapshot_sn: 47 };
    assert!(ack_matches(&good, 7, 3, &st));
    assert!(!ack_matches(&good, 8, 3, &st));
    assert!(!ack_matches(&good, 7, 4, &st));
    assert!(!ack_matches(&Ack { neighbor_snapshot_sn: 5, ..good }, 7, 3, &st));
    assert!(!ack_matches(&Ack { my_snapshot_sn: 30, ..good }, 7, 3, &st));
    // Before either Sync has been seen nothing can match.
    let fresh = synced(7, 20, 0);
    assert!(!ack_matches(&Ack { my_snapshot_sn: 0, ..good }, 7, 3, &fresh));
}
