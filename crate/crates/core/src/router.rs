// SPDX-License-Identifier: Apache-2.0

//! The per-router protocol engine.
//!
//! A [`Router`] is driven entirely through [`Router::dispatch`] and
//! [`Router::forward_data`]; it never reads a clock of its own. Timers are
//! exposed as [`Router::next_deadline`] and fire when the caller delivers
//! [`Input::Timer`] at or after that instant.
//!
//! Received control messages pass through sequencing, synchronisation, tree
//! maintenance, interest handling and finally acknowledgement, in that
//! order. Tree and interest consequences are derived by recomputing the
//! tree view and diffing it against the previous one.

use crate::config::{InterfaceConfig, RouterConfig};
use crate::interest::{interest_actions, InterestKind};
use crate::neighbor::{MasterAction, NeighborRecord, SlaveAction, SyncSession, SyncStep};
use crate::reliable::{ack_matches, build_ack, Pending, ReliableTx};
use crate::seq::{Classification, InterfaceSeqState, SeqStamp};
use crate::tree::{compute_view, upstream_actions, IfaceInput, NeighborInput, TreeInputs, TreeView, UpstreamKind};
use crate::types::*;
use crate::wire::{self, Body, Hello, Message, MsgType, Sync, SyncTree, TreeMsg, Upstream, WireError};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

/// Unicast routing information toward one source.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RouteInfo {
    pub root: Option<IfId>,
    pub metric: Option<Metric>,
    /// Interfaces on the source's own subnet.
    pub source_ifaces: Vec<IfId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interface {
    pub cfg: InterfaceConfig,
    pub id: IfId,
    pub up: bool,
    pub seq: InterfaceSeqState,
    pub neighbors: BTreeMap<Ipv4Addr, NeighborRecord>,
    pub tx: ReliableTx,
    pub next_hello: Time,
    pub hellos_sent: u64,
    pub groups: BTreeSet<Ipv4Addr>,
}

impl Interface {
    pub fn ip(&self) -> Ipv4Addr {
        self.cfg.ip
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeEntry {
    pub view: TreeView,
    pub source_active: bool,
    pub sat_deadline: Option<Time>,
    /// Non-root interfaces still forwarding after losing an assert.
    pub al_until: BTreeMap<IfId, Time>,
}

impl TreeEntry {
    fn new() -> Self {
        Self { view: TreeView::empty(), source_active: false, sat_deadline: None, al_until: BTreeMap::new() }
    }
}

#[derive(Debug, Clone)]
pub enum Input<'a> {
    Frame { iface: IfId, src: Ipv4Addr, dst: Ipv4Addr, bytes: &'a [u8] },
    Timer,
    Route { source: Ipv4Addr, route: RouteInfo },
    Membership { iface: IfId, group: Ipv4Addr, joined: bool },
    InterfaceDown(IfId),
    InterfaceUp(IfId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutFrame {
    pub iface: IfId,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub bytes: Vec<u8>,
    pub msg: Message,
    pub retransmission: bool,
}

/// Observable state changes, for tracing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RouterEvent {
    TreeState { tree: TreeRef, from: TreeState, to: TreeState },
    RootInterface { tree: TreeRef, from: Option<String>, to: Option<String> },
    Parent { tree: TreeRef, parent: Option<Ipv4Addr> },
    AssertWinner { tree: TreeRef, iface: String, aw: String },
    Forwarding { tree: TreeRef, iface: String, forwarding: bool },
    RouterInterest { tree: TreeRef, interested: bool },
    SyncState { iface: String, neighbor: Ipv4Addr, from: SyncState, to: SyncState },
    Rejected { iface: String, neighbor: Ipv4Addr, msg_type: MsgType, reason: &'static str },
    SnWrapped { iface: String, boot_time: BootTime },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Output {
    pub frames: Vec<OutFrame>,
    pub events: Vec<RouterEvent>,
}

#[derive(Debug, Clone)]
pub struct Router {
    pub cfg: RouterConfig,
    pub ifaces: Vec<Interface>,
    pub trees: BTreeMap<TreeRef, TreeEntry>,
    pub routes: BTreeMap<Ipv4Addr, RouteInfo>,
    now: Time,
    out: Output,
}

impl Router {
    /// A freshly booted router; its first Hellos go out on the first timer.
    pub fn new(cfg: RouterConfig, now: Time) -> Self {
        let ifaces = cfg
            .interfaces
            .iter()
            .enumerate()
            .map(|(id, c)| Interface {
                cfg: c.clone(),
                id,
                up: true,
                seq: InterfaceSeqState::new(now, cfg.max_sn),
                neighbors: BTreeMap::new(),
                tx: ReliableTx::default(),
                next_hello: now,
                hellos_sent: 0,
                groups: BTreeSet::new(),
            })
            .collect();
        Self { cfg, ifaces, trees: BTreeMap::new(), routes: BTreeMap::new(), now, out: Output::default() }
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }

    pub fn iface_by_name(&self, name: &str) -> Option<IfId> {
        self.ifaces.iter().position(|i| i.name() == name)
    }

    pub fn iface_by_ip(&self, ip: Ipv4Addr) -> Option<IfId> {
        self.ifaces.iter().position(|i| i.ip() == ip)
    }

    pub fn dispatch(&mut self, now: Time, input: Input<'_>) -> Result<Output, WireError> {
        self.now = self.now.max(now);
        match input {
            Input::Frame { iface, src, dst, bytes } => {
                let msg = wire::decode(bytes, src, dst, self.cfg.key.as_deref())?;
                self.on_message(iface, src, msg);
            }
            Input::Timer => self.on_timer(),
            Input::Route { source, route } => {
                self.routes.insert(source, route);
                let trees: Vec<TreeRef> = self.known_trees().into_iter().filter(|t| t.source == source).collect();
                for t in trees {
                    self.reevaluate(t, None);
                }
            }
            Input::Membership { iface, group, joined } => {
                let changed = if joined {
                    self.ifaces[iface].groups.insert(group)
                } else {
                    self.ifaces[iface].groups.remove(&group)
                };
                if changed {
                    let mut trees: BTreeSet<TreeRef> =
                        self.known_trees().into_iter().filter(|t| t.group == group).collect();
                    trees.extend(self.routes.keys().map(|s| TreeRef::new(*s, group)));
                    for t in trees {
                        self.reevaluate(t, None);
                    }
                }
            }
            Input::InterfaceDown(i) => self.interface_down(i),
            Input::InterfaceUp(i) => self.interface_up(i),
        }
        Ok(std::mem::take(&mut self.out))
    }

    /// Handles a data packet and returns the interfaces it leaves on.
    /// Packets failing the RPF check are dropped.
    pub fn forward_data(&mut self, now: Time, tree: TreeRef, iface: IfId) -> (Vec<IfId>, Output) {
        self.now = self.now.max(now);
        let route = self.routes.get(&tree.source).cloned().unwrap_or_default();
        let root = route.root.filter(|r| self.ifaces[*r].up);
        if root != Some(iface) || !self.ifaces[iface].up {
            return (Vec::new(), std::mem::take(&mut self.out));
        }
        if route.source_ifaces.contains(&iface) {
            let sat = self.cfg.timers.source_active;
            let e = self.trees.entry(tree).or_insert_with(TreeEntry::new);
            e.source_active = true;
            e.sat_deadline = Some(self.now + sat);
            if e.view.state != TreeState::Active || !e.view.originator {
                self.reevaluate(tree, None);
            }
        }
        let now = self.now;
        let out = match self.trees.get_mut(&tree) {
            Some(e) => {
                e.al_until.retain(|_, t| *t > now);
                let mut set = e.view.forwarding_set();
                set.extend(e.al_until.keys().copied().filter(|i| e.view.iface(*i).is_some_and(|v| !v.source_attached)));
                set.sort_unstable();
                set.dedup();
                set
            }
            None => compute_view(&self.tree_inputs(tree, false)).forwarding_set(),
        };
        (out, std::mem::take(&mut self.out))
    }

    pub fn next_deadline(&self) -> Option<Time> {
        let ifaces = self.ifaces.iter().filter(|i| i.up).flat_map(|i| {
            let nbrs = i
                .neighbors
                .values()
                .flat_map(|n| [Some(n.liveness_deadline), n.session.as_ref().and_then(|s| s.deadline)]);
            std::iter::once(Some(i.next_hello)).chain(nbrs).chain(std::iter::once(i.tx.next_deadline()))
        });
        let trees = self.trees.values().map(|e| e.sat_deadline);
        ifaces.chain(trees).flatten().min()
    }

    /// Whether anything besides periodic Hellos and liveness is in progress.
    pub fn is_idle(&self) -> bool {
        self.ifaces
            .iter()
            .all(|i| i.tx.is_empty() && i.neighbors.values().all(|n| n.session.as_ref().is_none_or(|s| s.finished)))
    }

    /// Trees the router holds an entry for, or a synchronised neighbor mentions.
    pub fn known_trees(&self) -> BTreeSet<TreeRef> {
        let mut set: BTreeSet<TreeRef> = self.trees.keys().copied().collect();
        for i in &self.ifaces {
            for n in i.neighbors.values().filter(|n| n.synced()) {
                set.extend(n.trees());
            }
        }
        set
    }

    /// The tree view used by the data plane, computed on demand for trees
    /// without an entry.
    pub fn view(&self, tree: TreeRef) -> TreeView {
        match self.trees.get(&tree) {
            Some(e) => e.view.clone(),
            None => compute_view(&self.tree_inputs(tree, false)),
        }
    }

    // ---- inputs -----------------------------------------------------------

    fn on_message(&mut self, i: IfId, src: Ipv4Addr, msg: Message) {
        if !self.ifaces[i].up || src == self.ifaces[i].ip() {
            return;
        }
        if let Body::Sync(s) = msg.body {
            self.on_sync(i, src, msg.boot_time, s);
            return;
        }
        let bt = msg.boot_time;
        let kind = msg.msg_type();
        let hold = match &msg.body {
            Body::Hello(h) => Time::from(h.hold_time) * SECOND,
            _ => self.cfg.timers.hold_time,
        };
        match self.ifaces[i].neighbors.get(&src).map(|n| n.seq.neighbor_boot_time) {
            None => {
                if hold > 0 {
                    self.discover(i, src, bt, hold);
                }
                return;
            }
            Some(known) if bt > known => {
                self.remove_neighbor(i, src);
                if hold > 0 {
                    self.discover(i, src, bt, hold);
                }
                return;
            }
            Some(known) if bt < known => {
                self.reject(i, src, kind, "stale boot time");
                return;
            }
            Some(_) => {}
        }
        match msg.body {
            Body::Hello(h) => self.on_hello(i, src, h),
            Body::Ack(a) => {
                let my_bt = self.ifaces[i].seq.boot_time;
                let rec = &self.ifaces[i].neighbors[&src];
                if ack_matches(&a, bt, my_bt, &rec.seq) {
                    let resolved = self.ifaces[i].tx.ack(src, a.tree, a.neighbor_sn);
                    self.resolve(i, resolved);
                } else {
                    self.reject(i, src, kind, "ack identifiers mismatch");
                }
            }
            _ => self.on_tree_message(i, src, msg),
        }
    }

    fn on_hello(&mut self, i: IfId, src: Ipv4Addr, h: Hello) {
        if h.hold_time == 0 {
            self.remove_neighbor(i, src);
            return;
        }
        let now = self.now;
        let rec = self.ifaces[i].neighbors.get_mut(&src).expect("caller checked");
        rec.liveness_deadline = now + Time::from(h.hold_time) * SECOND;
        // Per-tree SNs still shield fresher state from the snapshot being
        // installed; later Hellos repeat the checkpoint.
        if let Some(cp) = h.checkpoint_sn.filter(|_| rec.synced()) {
            rec.seq.apply_checkpoint(cp);
        }
    }

    fn on_tree_message(&mut self, i: IfId, src: Ipv4Addr, msg: Message) {
        let (tree, sn) = msg.tree_sn().expect("tree message");
        let stamp = SeqStamp::new(msg.boot_time, sn);
        let active = self.trees.get(&tree).is_some_and(|e| e.view.state == TreeState::Active);
        let rec = self.ifaces[i].neighbors.get_mut(&src).expect("caller checked");
        let class = rec.seq.classify_incoming(tree, stamp);
        let ack = rec.seq.should_ack(tree, stamp);
        let synced = rec.synced();
        let mut cause = None;
        if class == Classification::Accept {
            match msg.body {
                Body::IamUpstream(u) => {
                    rec.upstream.insert(tree, u.metric);
                    if active {
                        rec.interest.insert(tree, false);
                    } else {
                        rec.interest.remove(&tree);
                    }
                    cause = Some((i, src));
                }
                Body::IamNoLongerUpstream(_) => {
                    rec.upstream.remove(&tree);
                }
                Body::Interest(_) | Body::NoInterest(_) => {
                    rec.upstream.remove(&tree);
                    if active {
                        rec.interest.insert(tree, matches!(msg.body, Body::Interest(_)));
                    } else {
                        rec.interest.remove(&tree);
                    }
                }
                _ => unreachable!("not a tree message"),
            }
        } else {
            self.reject(i, src, msg.msg_type(), "stale sequence number");
        }
        if class == Classification::Accept && synced {
            self.reevaluate(tree, cause);
        }
        if ack {
            let iface = &self.ifaces[i];
            let rec = &iface.neighbors[&src];
            let reply = build_ack(iface.seq.boot_time, &rec.seq, tree, sn);
            self.emit(i, src, reply, false);
        }
    }

    // ---- neighbors and synchronisation -------------------------------------

    fn discover(&mut self, i: IfId, src: Ipv4Addr, bt: BootTime, hold: Time) {
        let rec = NeighborRecord::new(src, bt, self.now + hold);
        self.ifaces[i].neighbors.insert(src, rec);
        self.start_sync(i, src, true);
    }

    fn start_sync(&mut self, i: IfId, n: Ipv4Addr, master: bool) {
        let ssn = self.allocate(i);
        let snapshot = self.build_snapshot(i);
        let resolved = self.ifaces[i].tx.cancel_below(n, ssn);
        self.resolve(i, resolved);
        let fragment = self.cfg.fragment_size;
        let attempts = self.cfg.timers.sync_attempts;
        let rec = self.ifaces[i].neighbors.get_mut(&n).expect("record exists");
        rec.seq.my_snapshot_sn = ssn;
        rec.session = Some(SyncSession::new(master, snapshot, fragment, attempts));
        let to = if master { SyncState::Slave } else { SyncState::Master };
        self.set_sync_state(i, n, to);
        if master {
            let step = self.session_mut(i, n).master_start();
            self.session_mut(i, n).deadline = Some(self.now + self.cfg.timers.sync_retransmit);
            self.send_sync(i, n, step, true);
        }
    }

    /// Trees this interface announces in a snapshot: ACTIVE, non-root and
    /// not on the source subnet.
    fn build_snapshot(&self, i: IfId) -> Vec<SyncTree> {
        self.trees
            .iter()
            .filter(|(_, e)| e.view.state == TreeState::Active)
            .filter(|(_, e)| e.view.iface(i).is_some_and(|v| v.role == Role::NonRoot && !v.source_attached))
            .map(|(t, e)| SyncTree { tree: *t, metric: e.view.rpc })
            .collect()
    }

    fn session_mut(&mut self, i: IfId, n: Ipv4Addr) -> &mut SyncSession {
        self.ifaces[i].neighbors.get_mut(&n).and_then(|r| r.session.as_mut()).expect("session exists")
    }

    fn send_sync(&mut self, i: IfId, n: Ipv4Addr, step: SyncStep, master: bool) {
        let iface = &self.ifaces[i];
        let rec = &iface.neighbors[&n];
        let hold = (self.cfg.timers.hold_time / SECOND).min(u16::MAX as Time) as u16;
        let msg = Message {
            boot_time: iface.seq.boot_time,
            body: Body::Sync(Sync {
                my_snapshot_sn: rec.seq.my_snapshot_sn,
                neighbor_snapshot_sn: rec.seq.neighbor_snapshot_sn,
                neighbor_boot_time: rec.seq.neighbor_boot_time,
                master,
                more: step.more,
                sync_sn: step.sync_sn,
                hello_hold_time: (!step.more).then_some(hold),
                trees: step.trees,
            }),
        };
        self.emit(i, n, msg, false);
    }

    fn on_sync(&mut self, i: IfId, src: Ipv4Addr, bt: BootTime, s: Sync) {
        let my_bt = self.ifaces[i].seq.boot_time;
        if s.neighbor_boot_time != 0 && s.neighbor_boot_time != my_bt {
            self.reject(i, src, MsgType::Sync, "echoed boot time mismatch");
            return;
        }
        if let Some(rec) = self.ifaces[i].neighbors.get(&src) {
            let known_bt = rec.seq.neighbor_boot_time;
            let known_ssn = rec.seq.neighbor_snapshot_sn;
            if bt < known_bt || (bt == known_bt && known_ssn != 0 && s.my_snapshot_sn < known_ssn) {
                self.reject(i, src, MsgType::Sync, "sync from an earlier period");
                return;
            }
            if bt == known_bt && (known_ssn == 0 || s.my_snapshot_sn == known_ssn) {
                if s.neighbor_snapshot_sn != 0 && s.neighbor_snapshot_sn != rec.seq.my_snapshot_sn {
                    self.reject(i, src, MsgType::Sync, "echoed snapshot mismatch");
                    return;
                }
                self.sync_step(i, src, s);
                return;
            }
            // The neighbor rebooted or restarted synchronisation.
            self.remove_neighbor(i, src);
        }
        if s.neighbor_snapshot_sn != 0 || !s.master || s.sync_sn != 0 {
            self.reject(i, src, MsgType::Sync, "sync from an unknown neighbor");
            return;
        }
        let rec = NeighborRecord::new(src, bt, self.now + self.cfg.timers.hold_time);
        self.ifaces[i].neighbors.insert(src, rec);
        self.start_sync(i, src, false);
        self.sync_step(i, src, s);
    }

    fn sync_step(&mut self, i: IfId, n: Ipv4Addr, s: Sync) {
        let my_ip = self.ifaces[i].ip();
        let now = self.now;
        let rec = self.ifaces[i].neighbors.get_mut(&n).expect("record exists");
        if rec.seq.neighbor_snapshot_sn == 0 {
            rec.seq.neighbor_snapshot_sn = s.my_snapshot_sn;
            rec.forget_before_snapshot();
        }
        if let Some(h) = s.hello_hold_time.filter(|h| *h > 0) {
            rec.liveness_deadline = rec.liveness_deadline.max(now + Time::from(h) * SECOND);
        }
        match rec.sync_state {
            SyncState::Slave if s.master => {
                if n < my_ip {
                    return;
                }
                // Simultaneous start: the higher address keeps the Master role.
                let sess = rec.session.as_mut().expect("session");
                sess.i_am_master = false;
                sess.sync_sn = None;
                sess.awaiting_reply = false;
                sess.deadline = None;
                self.set_sync_state(i, n, SyncState::Master);
                self.slave_step(i, n, s);
            }
            SyncState::Slave => {
                if s.neighbor_snapshot_sn != rec.seq.my_snapshot_sn {
                    self.reject(i, n, MsgType::Sync, "reply without our snapshot");
                    return;
                }
                let attempts = self.cfg.timers.sync_attempts;
                let rto = self.cfg.timers.sync_retransmit;
                let sess = rec.session.as_mut().expect("session");
                match sess.master_on_reply(s.sync_sn, s.more, &s.trees) {
                    MasterAction::Send(step) => {
                        sess.attempts_left = attempts;
                        sess.deadline = Some(now + rto);
                        self.send_sync(i, n, step, true);
                    }
                    MasterAction::Done => {
                        sess.deadline = None;
                        self.finish_sync(i, n);
                    }
                    MasterAction::Ignore => {}
                }
            }
            SyncState::Master => self.slave_step(i, n, s),
            SyncState::Synced => {
                // A Master that missed our final answer repeats its last message.
                let resend = rec
                    .session
                    .as_ref()
                    .filter(|x| !x.i_am_master && s.master && x.sync_sn == Some(s.sync_sn))
                    .map(|x| x.step(s.sync_sn));
                if let Some(step) = resend {
                    self.send_sync(i, n, step, false);
                }
            }
            SyncState::Unknown => {}
        }
    }

    fn slave_step(&mut self, i: IfId, n: Ipv4Addr, s: Sync) {
        if !s.master {
            return;
        }
        match self.session_mut(i, n).slave_on_master(s.sync_sn, s.more, &s.trees) {
            SlaveAction::Reply { step, done } => {
                self.send_sync(i, n, step, false);
                if done {
                    self.finish_sync(i, n);
                }
            }
            SlaveAction::Resend(step) => self.send_sync(i, n, step, false),
            SlaveAction::Ignore => {}
        }
    }

    fn finish_sync(&mut self, i: IfId, n: Ipv4Addr) {
        let rec = self.ifaces[i].neighbors.get_mut(&n).expect("record exists");
        let received = rec.session.as_ref().map(|s| s.received.clone()).unwrap_or_default();
        rec.install_snapshot(&received);
        if let Some(s) = rec.session.as_mut() {
            s.snapshot.clear();
            s.snapshot.shrink_to_fit();
            s.received = Vec::new();
            if s.i_am_master {
                rec.session = None;
            }
        }
        self.set_sync_state(i, n, SyncState::Synced);
        self.reevaluate_all();
    }

    fn set_sync_state(&mut self, i: IfId, n: Ipv4Addr, to: SyncState) {
        let iface = &mut self.ifaces[i];
        let name = iface.cfg.name.clone();
        if let Some(rec) = iface.neighbors.get_mut(&n) {
            let from = rec.sync_state;
            if from != to {
                rec.sync_state = to;
                self.out.events.push(RouterEvent::SyncState { iface: name, neighbor: n, from, to });
            }
        }
    }

    fn remove_neighbor(&mut self, i: IfId, n: Ipv4Addr) {
        let Some(rec) = self.ifaces[i].neighbors.remove(&n) else { return };
        let name = self.ifaces[i].cfg.name.clone();
        self.out.events.push(RouterEvent::SyncState {
            iface: name,
            neighbor: n,
            from: rec.sync_state,
            to: SyncState::Unknown,
        });
        let resolved = self.ifaces[i].tx.drop_neighbor(n);
        self.resolve(i, resolved);
        if rec.synced() {
            self.reevaluate_all();
        }
    }

    fn interface_down(&mut self, i: IfId) {
        if !self.ifaces[i].up {
            return;
        }
        let nbrs: Vec<Ipv4Addr> = self.ifaces[i].neighbors.keys().copied().collect();
        let name = self.ifaces[i].cfg.name.clone();
        for n in nbrs {
            let rec = self.ifaces[i].neighbors.remove(&n).expect("listed");
            self.out.events.push(RouterEvent::SyncState {
                iface: name.clone(),
                neighbor: n,
                from: rec.sync_state,
                to: SyncState::Unknown,
            });
        }
        let iface = &mut self.ifaces[i];
        iface.tx.clear();
        iface.up = false;
        self.reevaluate_all();
    }

    fn interface_up(&mut self, i: IfId) {
        if self.ifaces[i].up {
            return;
        }
        let now = self.now;
        let iface = &mut self.ifaces[i];
        let old_bt = iface.seq.boot_time;
        iface.seq = InterfaceSeqState::new(now.max(old_bt), self.cfg.max_sn);
        iface.up = true;
        iface.next_hello = now;
        iface.hellos_sent = 0;
        self.reevaluate_all();
    }

    // ---- timers -----------------------------------------------------------

    fn on_timer(&mut self) {
        let now = self.now;
        for i in 0..self.ifaces.len() {
            if !self.ifaces[i].up {
                continue;
            }
            let expired: Vec<Ipv4Addr> =
                self.ifaces[i].neighbors.values().filter(|n| n.liveness_deadline <= now).map(|n| n.ip).collect();
            for n in expired {
                self.remove_neighbor(i, n);
            }
            self.sync_timers(i);
            let rto = self.cfg.timers.retransmit;
            for (msg, targets) in self.ifaces[i].tx.due(now, rto) {
                for t in targets {
                    self.emit(i, t, msg.clone(), true);
                }
            }
            if self.ifaces[i].next_hello <= now {
                self.send_hello(i);
            }
        }
        let expired: Vec<TreeRef> =
            self.trees.iter().filter(|(_, e)| e.sat_deadline.is_some_and(|d| d <= now)).map(|(t, _)| *t).collect();
        for t in expired {
            let e = self.trees.get_mut(&t).expect("listed");
            e.sat_deadline = None;
            e.source_active = false;
            self.reevaluate(t, None);
        }
    }

    fn sync_timers(&mut self, i: IfId) {
        let now = self.now;
        let due: Vec<Ipv4Addr> = self.ifaces[i]
            .neighbors
            .values()
            .filter(|n| n.session.as_ref().is_some_and(|s| s.deadline.is_some_and(|d| d <= now)))
            .map(|n| n.ip)
            .collect();
        for n in due {
            let rto = self.cfg.timers.sync_retransmit;
            let sess = self.session_mut(i, n);
            if sess.attempts_left == 0 {
                self.remove_neighbor(i, n);
                continue;
            }
            sess.attempts_left -= 1;
            sess.deadline = Some(now + rto);
            if let Some(step) = sess.master_current() {
                self.send_sync(i, n, step, true);
            }
        }
    }

    fn send_hello(&mut self, i: IfId) {
        let period = self.cfg.timers.hello_period;
        let hold = (self.cfg.timers.hold_time / SECOND).min(u16::MAX as Time) as u16;
        let iface = &mut self.ifaces[i];
        iface.next_hello = self.now + period;
        iface.hellos_sent += 1;
        let checkpoint_sn =
            iface.hellos_sent.is_multiple_of(CHECKPOINT_EVERY_NTH_HELLO).then(|| iface.seq.checkpoint_sn_out());
        let msg = Message {
            boot_time: iface.seq.boot_time,
            body: Body::Hello(Hello { hold_time: hold, checkpoint_sn, unknown: Vec::new() }),
        };
        self.emit(i, ALL_ROUTERS, msg, false);
    }

    // ---- tree evaluation --------------------------------------------------

    fn tree_inputs(&self, tree: TreeRef, source_active: bool) -> TreeInputs {
        let route = self.routes.get(&tree.source);
        let root = route.and_then(|r| r.root).filter(|r| self.ifaces[*r].up);
        let ifaces = self
            .ifaces
            .iter()
            .filter(|i| i.up)
            .map(|i| IfaceInput {
                id: i.id,
                ip: i.ip(),
                source_attached: route.is_some_and(|r| r.source_ifaces.contains(&i.id)),
                members: i.groups.contains(&tree.group),
                neighbors: i
                    .neighbors
                    .values()
                    .filter(|n| n.synced())
                    .map(|n| NeighborInput {
                        ip: n.ip,
                        upstream: n.upstream.get(&tree).copied(),
                        interest: n.interest.get(&tree).copied(),
                    })
                    .collect(),
            })
            .collect();
        TreeInputs {
            root,
            rpc: route.and_then(|r| r.metric).unwrap_or(Metric::INFINITE),
            source_active,
            ifaces,
            initial_di: self.cfg.initial_di,
            feasibility: self.cfg.feasibility,
        }
    }

    fn reevaluate_all(&mut self) {
        for t in self.known_trees() {
            self.reevaluate(t, None);
        }
    }

    /// Recomputes one tree and emits whatever the change implies.
    /// `iam_upstream_from` names the sender of an IamUpstream just accepted.
    fn reevaluate(&mut self, tree: TreeRef, iam_upstream_from: Option<(IfId, Ipv4Addr)>) {
        let now = self.now;
        let sat = self.cfg.timers.source_active;
        let hysteresis = self.cfg.timers.al_hysteresis;
        let mut inputs = self.tree_inputs(tree, false);
        let entry = self.trees.entry(tree).or_insert_with(TreeEntry::new);
        if inputs.is_originator() {
            if !entry.view.originator && !entry.source_active && entry.view.state == TreeState::Active {
                // A router that becomes originator while ACTIVE keeps the source alive.
                entry.source_active = true;
                entry.sat_deadline = Some(now + sat);
            }
        } else {
            entry.source_active = false;
            entry.sat_deadline = None;
        }
        inputs.source_active = entry.source_active;
        let new = compute_view(&inputs);
        let old = std::mem::replace(&mut entry.view, new.clone());
        for o in old.ifaces.iter().filter(|o| o.forwarding) {
            if new.iface(o.id).is_some_and(|v| v.role == Role::NonRoot && v.aw != AwView::Myself) {
                entry.al_until.insert(o.id, now + hysteresis);
            }
        }
        entry.al_until.retain(|i, t| *t > now && new.iface(*i).is_some());
        if new.state != TreeState::Active {
            for i in &mut self.ifaces {
                for n in i.neighbors.values_mut() {
                    n.interest.remove(&tree);
                }
            }
        }
        self.trace_view(tree, &old, &new);
        for (i, kind) in upstream_actions(&old, &new) {
            self.send_upstream(i, tree, kind, new.rpc);
        }
        for (i, kind, target) in interest_actions(&old, &new, iam_upstream_from) {
            self.send_interest(i, tree, kind, target);
        }
        let referenced = self.ifaces.iter().any(|i| i.neighbors.values().any(|n| n.upstream.contains_key(&tree)));
        let e = &self.trees[&tree];
        if new.state == TreeState::Inactive && !e.source_active && e.al_until.is_empty() && !referenced {
            self.trees.remove(&tree);
        }
    }

    fn trace_view(&mut self, tree: TreeRef, old: &TreeView, new: &TreeView) {
        let name = |id: Option<IfId>| id.map(|i| self.ifaces[i].cfg.name.clone());
        let mut ev = Vec::new();
        if old.state != new.state {
            ev.push(RouterEvent::TreeState { tree, from: old.state, to: new.state });
        }
        if old.root != new.root {
            ev.push(RouterEvent::RootInterface { tree, from: name(old.root), to: name(new.root) });
        }
        if old.parent.map(|p| p.0) != new.parent.map(|p| p.0) {
            ev.push(RouterEvent::Parent { tree, parent: new.parent.map(|p| p.0) });
        }
        for v in &new.ifaces {
            let o = old.iface(v.id);
            if v.role == Role::NonRoot && o.map(|o| o.aw) != Some(v.aw) {
                ev.push(RouterEvent::AssertWinner { tree, iface: name(Some(v.id)).unwrap(), aw: v.aw.to_string() });
            }
            if o.is_some_and(|o| o.forwarding) != v.forwarding {
                ev.push(RouterEvent::Forwarding { tree, iface: name(Some(v.id)).unwrap(), forwarding: v.forwarding });
            }
        }
        if old.interested != new.interested {
            ev.push(RouterEvent::RouterInterest { tree, interested: new.interested });
        }
        self.out.events.extend(ev);
    }

    // ---- transmission -----------------------------------------------------

    fn allocate(&mut self, i: IfId) -> Sn {
        let (sn, wrapped) = self.ifaces[i].seq.allocate_sn(self.now);
        if wrapped {
            let iface = &mut self.ifaces[i];
            iface.tx.clear();
            let ev = RouterEvent::SnWrapped { iface: iface.cfg.name.clone(), boot_time: iface.seq.boot_time };
            self.out.events.push(ev);
        }
        sn
    }

    fn resolve(&mut self, i: IfId, sns: Vec<Sn>) {
        for sn in sns {
            self.ifaces[i].seq.resolve(sn);
        }
    }

    fn send_upstream(&mut self, i: IfId, tree: TreeRef, kind: UpstreamKind, metric: Metric) {
        if !self.ifaces[i].up {
            return;
        }
        let sn = self.allocate(i);
        let body = match kind {
            UpstreamKind::IamUpstream => Body::IamUpstream(Upstream { sn, tree, metric }),
            UpstreamKind::IamNoLongerUpstream => Body::IamNoLongerUpstream(TreeMsg { sn, tree }),
        };
        let iface = &mut self.ifaces[i];
        let msg = Message { boot_time: iface.seq.boot_time, body };
        let awaiting: BTreeSet<Ipv4Addr> = iface.neighbors.keys().copied().collect();
        let p = Pending {
            sn,
            tree,
            msg: msg.clone(),
            awaiting,
            unicast: None,
            deadline: self.now + self.cfg.timers.retransmit,
        };
        iface.seq.hold(sn);
        let resolved = iface.tx.add_upstream(p);
        self.resolve(i, resolved);
        self.emit(i, ALL_ROUTERS, msg, false);
    }

    fn send_interest(&mut self, i: IfId, tree: TreeRef, kind: InterestKind, target: Ipv4Addr) {
        if !self.ifaces[i].up {
            return;
        }
        let sn = self.allocate(i);
        let m = TreeMsg { sn, tree };
        let body = match kind {
            InterestKind::Interest => Body::Interest(m),
            InterestKind::NoInterest => Body::NoInterest(m),
        };
        let iface = &mut self.ifaces[i];
        let msg = Message { boot_time: iface.seq.boot_time, body };
        let awaiting: BTreeSet<Ipv4Addr> =
            iface.neighbors.contains_key(&target).then_some(target).into_iter().collect();
        let p = Pending {
            sn,
            tree,
            msg: msg.clone(),
            awaiting,
            unicast: Some(target),
            deadline: self.now + self.cfg.timers.retransmit,
        };
        iface.seq.hold(sn);
        let resolved = iface.tx.add_interest(p);
        self.resolve(i, resolved);
        self.emit(i, target, msg, false);
    }

    fn emit(&mut self, i: IfId, dst: Ipv4Addr, msg: Message, retransmission: bool) {
        let src = self.ifaces[i].ip();
        let bytes = wire::encode(&msg, src, dst, self.cfg.key.as_deref());
        self.out.frames.push(OutFrame { iface: i, src, dst, bytes, msg, retransmission });
    }

    fn reject(&mut self, i: IfId, n: Ipv4Addr, msg_type: MsgType, reason: &'static str) {
        let iface = self.ifaces[i].cfg.name.clone();
        self.out.events.push(RouterEvent::Rejected { iface, neighbor: n, msg_type, reason });
    }
}
