// SPDX-License-Identifier: Apache-2.0

//! The event loop.
//!
//! Control frames travel as encoded bytes and are decoded by the receiving
//! router. Data packets are abstract tokens: they are delayed like frames
//! but never lost or duplicated, and a hop limit bounds transient loops.
//!
//! A simulation is *settled* when no control frame or route notification is
//! in flight, every router is idle (nothing awaiting acknowledgement, no
//! synchronisation running) and every router's neighbor tables list exactly
//! the live adjacencies, all SYNCED. Hellos, data and timers may still run.

use crate::check::{self, Violation};
use crate::link::{LinkModel, LinkOverride};
use crate::oracle::{compute_routes, NetState};
use crate::parse::ParseError;
use crate::scenario::{Action, Nth, Scenario, ScenarioEvent};
use crate::topology::Topology;
use crate::trace::{summarize, TraceRecord};
use hpim_core::wire::{self, MsgType};
use hpim_core::{
    state_digest, AwView, DigestMode, Input, InterfaceConfig, Metric, OutFrame, Output, RouteInfo, Router,
    RouterConfig, SyncState, Time, TreeRef,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::net::Ipv4Addr;
use std::sync::Arc;
use thiserror::Error;

const DATA_HOP_LIMIT: u8 = 64;
const FINGERPRINT_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const ASSERT_RETRY: Time = 500 * hpim_core::MILLIS;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("scenario line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("scenario names no topology")]
    NoTopology,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub seed: u64,
    pub trace: bool,
    /// Keep every transmitted frame so it can be captured later.
    pub log_frames: bool,
    pub links: LinkOverride,
    /// Applied after topology and scenario parameters.
    pub params: Vec<(String, String)>,
    /// How long a failing assertion may be retried while the network has
    /// not settled. Retries never run past the next scripted action.
    pub assert_grace: Time,
}

#[derive(Debug, Clone)]
enum Event {
    Frame { r: usize, i: usize, src: Ipv4Addr, dst: Ipv4Addr, bytes: Arc<[u8]>, frame: u64, control: bool },
    Data { r: usize, i: usize, tree: TreeRef, hops: u8 },
    Wake(usize),
    Route { r: usize, epoch: u64, source: Ipv4Addr, route: RouteInfo },
    SourceTick { s: usize, group: Ipv4Addr, epoch: u64 },
    Script(usize),
}

#[derive(Clone)]
struct Queued {
    t: Time,
    seq: u64,
    ev: Event,
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        (self.t, self.seq) == (o.t, o.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Queued {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.t, o.seq).cmp(&(self.t, self.seq))
    }
}

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub id: u64,
    pub t: Time,
    pub router: usize,
    pub iface: usize,
    pub link: usize,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub msg_type: MsgType,
    pub bytes: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertResult {
    pub t: Time,
    pub line: usize,
    pub text: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    /// Transmissions per message type, retransmissions included.
    pub sent: BTreeMap<String, u64>,
    pub retransmitted: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub data_hops: u64,
    pub events: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub end: Time,
    pub settled: bool,
    pub asserts: Vec<AssertResult>,
    pub violations: Vec<(Time, Violation)>,
    pub stats: Stats,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.asserts.iter().all(|a| a.ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssertResult> {
        self.asserts.iter().filter(|a| !a.ok)
    }
}

#[derive(Clone)]
pub struct Simulator {
    pub topo: Topology,
    pub net: NetState,
    pub routers: Vec<Option<Router>>,
    pub links: Vec<LinkModel>,
    now: Time,
    seq: u64,
    queue: BinaryHeap<Queued>,
    rng: ChaCha8Rng,
    wake_at: Vec<Option<Time>>,
    notified: Vec<BTreeMap<Ipv4Addr, RouteInfo>>,
    route_epoch: Vec<u64>,
    pending_routes: usize,
    in_flight: usize,
    /// Data frames still travelling; their arrival can start a tree.
    data_in_flight: usize,
    fifo: HashMap<(usize, Ipv4Addr, usize, usize), Time>,
    next_frame: u64,
    next_epoch: u64,
    sources_on: BTreeMap<(usize, Ipv4Addr), u64>,
    /// (receiver, group) pairs currently joined.
    pub memberships: BTreeSet<(usize, Ipv4Addr)>,
    /// Last instant each receiver saw data of a tree.
    pub received: BTreeMap<(usize, TreeRef), Time>,
    script: Vec<ScenarioEvent>,
    script_at: Vec<Time>,
    assert_grace: Time,
    /// Assertions awaiting a retry, with their deadlines.
    retrying: BTreeMap<usize, Time>,
    trace_on: bool,
    pub trace: Vec<TraceRecord>,
    log_frames: bool,
    pub frames: Vec<FrameRecord>,
    captures: HashMap<String, FrameRecord>,
    digests: HashMap<String, (DigestMode, Vec<String>)>,
    pub asserts: Vec<AssertResult>,
    pub violations: Vec<(Time, Violation)>,
    pub stats: Stats,
    /// Order-sensitive hash of control frame deliveries.
    pub fingerprint: u64,
}

impl Simulator {
    pub fn new(topo: Topology, opts: &SimOptions) -> Result<Self, SimError> {
        Self::build(topo, &Scenario::default(), opts)
    }

    pub fn from_scenario(sc: &Scenario, opts: &SimOptions) -> Result<Self, SimError> {
        let path = sc.topology.as_ref().ok_or(SimError::NoTopology)?;
        Self::build(Topology::load(path)?, sc, opts)
    }

    /// Boots every router at time zero and schedules the scenario's events.
    pub fn build(mut topo: Topology, sc: &Scenario, opts: &SimOptions) -> Result<Self, SimError> {
        for (k, v) in sc.params.iter().chain(&opts.params) {
            topo.params.set(k, v).map_err(|msg| SimError::Invalid { line: 0, msg })?;
        }
        let links = topo
            .links
            .iter()
            .map(|l| {
                let mut m = l.model;
                opts.links.apply(&mut m);
                m
            })
            .collect();
        let n = topo.routers.len();
        let log_frames = opts.log_frames || sc.events.iter().any(|e| matches!(e.action, Action::CaptureFrame { .. }));
        let mut sim = Simulator {
            net: NetState::new(&topo),
            topo,
            routers: (0..n).map(|_| None).collect(),
            links,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            wake_at: vec![None; n],
            notified: vec![BTreeMap::new(); n],
            route_epoch: vec![0; n],
            pending_routes: 0,
            in_flight: 0,
            data_in_flight: 0,
            fifo: HashMap::new(),
            next_frame: 0,
            next_epoch: 0,
            sources_on: BTreeMap::new(),
            memberships: BTreeSet::new(),
            received: BTreeMap::new(),
            script: Vec::new(),
            script_at: Vec::new(),
            assert_grace: opts.assert_grace,
            retrying: BTreeMap::new(),
            trace_on: opts.trace,
            trace: Vec::new(),
            log_frames,
            frames: Vec::new(),
            captures: HashMap::new(),
            digests: HashMap::new(),
            asserts: Vec::new(),
            violations: Vec::new(),
            stats: Stats::default(),
            fingerprint: FINGERPRINT_BASIS,
        };
        sim.validate_events(&sc.events)?;
        for r in 0..n {
            sim.boot(r);
        }
        sim.schedule(&sc.events, 0);
        Ok(sim)
    }

    /// Adds events at `offset` plus their (possibly randomised) instants.
    pub fn schedule(&mut self, events: &[ScenarioEvent], offset: Time) {
        for e in events {
            let t = match e.until {
                Some(u) if u > e.at => self.rng.gen_range(e.at..=u),
                _ => e.at,
            };
            self.script.push(e.clone());
            self.script_at.push(offset + t);
            self.push(offset + t, Event::Script(self.script.len() - 1));
        }
    }

    pub fn validate_events(&self, events: &[ScenarioEvent]) -> Result<(), SimError> {
        for e in events {
            self.validate(&e.action).map_err(|msg| SimError::Invalid { line: e.line, msg })?;
        }
        Ok(())
    }

    /// Restarts the random stream, e.g. for each schedule forked from one
    /// settled state.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.fingerprint = FINGERPRINT_BASIS;
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.trace_on = on;
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn next_time(&self) -> Option<Time> {
        self.queue.peek().map(|q| q.t)
    }

    /// Processes one event; false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(q) = self.queue.pop() else { return false };
        self.now = q.t;
        self.stats.events += 1;
        match q.ev {
            Event::Frame { r, i, src, dst, bytes, frame, control } => {
                self.on_frame(r, i, src, dst, bytes, frame, control)
            }
            Event::Data { r, i, tree, hops } => self.on_data(r, i, tree, hops),
            Event::Wake(r) => {
                if self.wake_at[r] == Some(self.now) {
                    self.wake_at[r] = None;
                    self.drive(r, Input::Timer);
                }
            }
            Event::Route { r, epoch, source, route } => {
                self.pending_routes -= 1;
                if epoch == self.route_epoch[r] {
                    self.drive(r, Input::Route { source, route });
                }
            }
            Event::SourceTick { s, group, epoch } => {
                if self.sources_on.get(&(s, group)) == Some(&epoch) {
                    self.emit_data(s, group);
                    let next = self.now + self.topo.params.data_interval;
                    self.push(next, Event::SourceTick { s, group, epoch });
                }
            }
            Event::Script(idx) => self.run_event(idx),
        }
        true
    }

    /// Runs every event scheduled at or before `end`.
    pub fn run_until(&mut self, end: Time) {
        while self.next_time().is_some_and(|t| t <= end) {
            self.step();
        }
        self.now = self.now.max(end);
    }

    /// Runs until settled or `limit`; checks only between instants.
    pub fn run_until_settled(&mut self, limit: Time) -> bool {
        loop {
            let Some(t) = self.next_time() else { return self.settled() };
            if t > self.now && self.settled() {
                return true;
            }
            if t > limit {
                self.now = self.now.max(limit);
                return self.settled();
            }
            self.step();
        }
    }

    /// Runs a scenario to its end: the `end` directive or its last event.
    pub fn run(&mut self, end: Time) -> RunReport {
        self.run_until(end);
        if let Some(&last) = self.retrying.values().max() {
            self.run_until(last);
        }
        self.report()
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            end: self.now,
            settled: self.settled(),
            asserts: self.asserts.clone(),
            violations: self.violations.clone(),
            stats: self.stats.clone(),
        }
    }

    pub fn settled(&self) -> bool {
        self.in_flight == 0
            && self.data_in_flight == 0
            && self.pending_routes == 0
            && self.routers.iter().flatten().all(Router::is_idle)
            && self.adjacencies_synced()
    }

    fn adjacencies_synced(&self) -> bool {
        for (r, router) in self.routers.iter().enumerate() {
            let Some(router) = router else { continue };
            for (i, iface) in router.ifaces.iter().enumerate() {
                let expected: BTreeSet<Ipv4Addr> = if self.net.live(&self.topo, r, i) {
                    self.live_peers(r, i).map(|(q, k)| self.topo.routers[q].ifaces[k].ip).collect()
                } else {
                    BTreeSet::new()
                };
                if !iface.neighbors.keys().copied().eq(expected.iter().copied())
                    || !iface.neighbors.values().all(|n| n.synced())
                {
                    return false;
                }
            }
        }
        true
    }

    /// Live interfaces of other live routers sharing a link with `(r, i)`.
    pub fn live_peers(&self, r: usize, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let link = self.topo.routers[r].ifaces[i].link;
        self.topo
            .attached(link)
            .filter(move |&(q, k)| q != r && self.routers[q].is_some() && self.net.live(&self.topo, q, k))
    }

    /// Groups some receiver on `link` has joined.
    pub fn link_groups(&self, link: usize) -> BTreeSet<Ipv4Addr> {
        self.memberships.iter().filter(|(h, _)| self.topo.receivers[*h].link == link).map(|(_, g)| *g).collect()
    }

    pub fn source_running(&self, s: usize, group: Ipv4Addr) -> bool {
        self.sources_on.contains_key(&(s, group))
    }

    pub fn digests(&self, mode: DigestMode) -> Vec<String> {
        self.routers
            .iter()
            .zip(&self.topo.routers)
            .map(|(r, def)| match r {
                Some(r) => state_digest(r, mode),
                None => format!("router {} down\n", def.name),
            })
            .collect()
    }

    /// Appends the current digest of every router to the trace.
    pub fn trace_digests(&mut self, mode: DigestMode) {
        let label = match mode {
            DigestMode::Full => "full",
            DigestMode::Protocol => "protocol",
        };
        for (def, digest) in self.topo.routers.iter().zip(self.digests(mode)) {
            self.trace.push(TraceRecord::Digest { t: self.now, router: def.name.clone(), mode: label.into(), digest });
        }
    }

    pub fn name_of(&self, ip: Ipv4Addr) -> String {
        match self.topo.owner_of(ip) {
            Some((r, _)) => self.topo.routers[r].name.clone(),
            None => ip.to_string(),
        }
    }

    /// Runs the global invariant suite now, recording any violations.
    /// The invariant suite plus quiescence, without recording anything.
    pub fn evaluate(&self) -> Vec<Violation> {
        let mut v = check::quiescent(self);
        if !self.settled() {
            v.insert(0, Violation::new("quiescence", "network has not settled"));
        }
        v
    }

    /// Evaluates and records violations in the report and trace.
    pub fn check(&mut self) -> Vec<Violation> {
        let v = self.evaluate();
        for x in &v {
            if self.trace_on {
                self.trace.push(TraceRecord::Violation {
                    t: self.now,
                    property: x.property.to_string(),
                    detail: x.detail.clone(),
                });
            }
            self.violations.push((self.now, x.clone()));
        }
        v
    }

    // ---- plumbing ---------------------------------------------------------

    fn push(&mut self, t: Time, ev: Event) {
        self.seq += 1;
        self.queue.push(Queued { t, seq: self.seq, ev });
    }

    fn router_config(&self, r: usize) -> RouterConfig {
        let def = &self.topo.routers[r];
        let p = &self.topo.params;
        let ifaces =
            def.ifaces.iter().map(|i| InterfaceConfig { name: i.name.clone(), ip: i.ip, cost: i.cost }).collect();
        let mut cfg = RouterConfig::new(def.name.clone(), ifaces);
        cfg.timers = p.timers.clone();
        cfg.fragment_size = p.fragment_size;
        cfg.max_sn = p.max_sn;
        cfg.initial_di = def.initial_di.unwrap_or(p.initial_di);
        cfg.key = def.key.as_ref().map(|k| k.as_bytes().to_vec());
        cfg.feasibility = def.feasibility && p.feasibility;
        cfg
    }

    fn boot(&mut self, r: usize) {
        self.routers[r] = Some(Router::new(self.router_config(r), self.now));
        for i in 0..self.topo.routers[r].ifaces.len() {
            if !self.net.iface_up[r][i] {
                self.drive(r, Input::InterfaceDown(i));
            }
            let link = self.topo.routers[r].ifaces[i].link;
            for group in self.link_groups(link) {
                self.drive(r, Input::Membership { iface: i, group, joined: true });
            }
        }
        let table = compute_routes(&self.topo, &self.net).swap_remove(r);
        for (source, route) in &table {
            self.drive(r, Input::Route { source: *source, route: route.clone() });
        }
        self.notified[r] = table;
    }

    /// Feeds a non-frame input to a live router.
    fn drive(&mut self, r: usize, input: Input<'_>) {
        let Some(router) = self.routers[r].as_mut() else { return };
        let after_timer = matches!(input, Input::Timer);
        let out = router.dispatch(self.now, input).expect("only frames can fail to decode");
        self.process_output(r, out);
        self.reschedule(r, after_timer);
    }

    /// After a timer run, deadlines still due are pushed to the next tick so
    /// a router cannot spin on one instant.
    fn reschedule(&mut self, r: usize, after_timer: bool) {
        let Some(t) = self.routers[r].as_ref().and_then(Router::next_deadline) else { return };
        let t = t.max(self.now + Time::from(after_timer));
        if self.wake_at[r].is_none_or(|w| t < w) {
            self.wake_at[r] = Some(t);
            self.push(t, Event::Wake(r));
        }
    }

    fn process_output(&mut self, r: usize, out: Output) {
        if self.trace_on {
            for ev in &out.events {
                self.trace.push(TraceRecord::State {
                    t: self.now,
                    router: self.topo.routers[r].name.clone(),
                    change: serde_json::to_value(ev).expect("events serialize"),
                });
            }
        }
        for f in out.frames {
            self.transmit(r, f);
        }
    }

    fn transmit(&mut self, r: usize, f: OutFrame) {
        let id = self.next_frame;
        self.next_frame += 1;
        let mt = f.msg.msg_type();
        let link = self.topo.routers[r].ifaces[f.iface].link;
        *self.stats.sent.entry(mt.name().to_string()).or_default() += 1;
        if f.retransmission {
            self.stats.retransmitted += 1;
        }
        let bytes: Arc<[u8]> = f.bytes.into();
        if self.trace_on {
            self.trace.push(TraceRecord::Send {
                t: self.now,
                frame: id,
                router: self.topo.routers[r].name.clone(),
                iface: self.topo.routers[r].ifaces[f.iface].name.clone(),
                link: self.topo.links[link].name.clone(),
                msg_type: mt.name().to_string(),
                dst: f.dst.to_string(),
                retransmission: f.retransmission,
                detail: summarize(&f.msg),
            });
        }
        if self.log_frames {
            self.frames.push(FrameRecord {
                id,
                t: self.now,
                router: r,
                iface: f.iface,
                link,
                src: f.src,
                dst: f.dst,
                msg_type: mt,
                bytes: bytes.clone(),
            });
        }
        if !self.net.live(&self.topo, r, f.iface) {
            self.drop_frame(id, link, "sender detached");
            return;
        }
        self.broadcast(link, f.src, f.dst, bytes, id, mt != MsgType::Hello);
    }

    fn drop_frame(&mut self, frame: u64, link: usize, reason: &str) {
        self.stats.dropped += 1;
        if self.trace_on {
            self.trace.push(TraceRecord::Drop {
                t: self.now,
                frame,
                link: self.topo.links[link].name.clone(),
                reason: reason.to_string(),
            });
        }
    }

    /// Puts a frame on a link; every attached interface except the sender's
    /// receives multicast, only the addressee receives unicast.
    fn broadcast(&mut self, link: usize, src: Ipv4Addr, dst: Ipv4Addr, bytes: Arc<[u8]>, id: u64, control: bool) {
        let model = self.links[link];
        let targets: Vec<(usize, usize)> = self
            .topo
            .attached(link)
            .filter(|&(q, k)| {
                let ip = self.topo.routers[q].ifaces[k].ip;
                ip != src && (dst.is_multicast() || dst == ip)
            })
            .collect();
        for (q, k) in targets {
            if model.lost(&mut self.rng) {
                self.drop_frame(id, link, "loss");
                continue;
            }
            let copies = 1 + usize::from(model.duplicated(&mut self.rng));
            for _ in 0..copies {
                let t = self.arrival(link, src, q, k, &model);
                if control {
                    self.in_flight += 1;
                }
                self.push(t, Event::Frame { r: q, i: k, src, dst, bytes: bytes.clone(), frame: id, control });
            }
        }
    }

    fn arrival(&mut self, link: usize, src: Ipv4Addr, q: usize, k: usize, model: &LinkModel) -> Time {
        let t = self.now + model.sample_delay(&mut self.rng);
        if model.reorder {
            return t;
        }
        let last = self.fifo.entry((link, src, q, k)).or_insert(0);
        let t = t.max(*last);
        *last = t;
        t
    }

    #[allow(clippy::too_many_arguments)]
    fn on_frame(
        &mut self,
        r: usize,
        i: usize,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        bytes: Arc<[u8]>,
        frame: u64,
        control: bool,
    ) {
        if control {
            self.in_flight -= 1;
        }
        let link = self.topo.routers[r].ifaces[i].link;
        if self.routers[r].is_none() || !self.net.live(&self.topo, r, i) {
            self.drop_frame(frame, link, "receiver detached");
            return;
        }
        self.stats.delivered += 1;
        let mt = wire::peek_type(&bytes);
        if control {
            let tag = [r as u8, i as u8, mt.map_or(0, |m| m as u8)];
            for b in tag.iter().chain(&src.octets()) {
                self.fingerprint = (self.fingerprint ^ u64::from(*b)).wrapping_mul(0x100_0000_01b3);
            }
        }
        let router = self.routers[r].as_mut().expect("checked");
        let result = router.dispatch(self.now, Input::Frame { iface: i, src, dst, bytes: &bytes });
        let name = || self.topo.routers[r].name.clone();
        let iface = || self.topo.routers[r].ifaces[i].name.clone();
        match result {
            Ok(out) => {
                if self.trace_on {
                    let msg_type = mt.map_or("?", MsgType::name).to_string();
                    self.trace.push(TraceRecord::Recv { t: self.now, frame, router: name(), iface: iface(), msg_type });
                }
                self.process_output(r, out);
            }
            Err(e) => {
                if self.trace_on {
                    let error = e.to_string();
                    self.trace.push(TraceRecord::DecodeError {
                        t: self.now,
                        frame,
                        router: name(),
                        iface: iface(),
                        error,
                    });
                }
            }
        }
        self.reschedule(r, false);
    }

    // ---- data plane -------------------------------------------------------

    fn emit_data(&mut self, s: usize, group: Ipv4Addr) {
        let src = &self.topo.sources[s];
        let (link, tree) = (src.link, TreeRef::new(src.ip, group));
        if self.net.link_up[link] {
            self.put_data(link, None, tree, 0);
        }
    }

    fn put_data(&mut self, link: usize, from: Option<(usize, usize)>, tree: TreeRef, hops: u8) {
        let t = self.now + self.links[link].delay;
        let targets: Vec<(usize, usize)> = self
            .topo
            .attached(link)
            .filter(|&(q, k)| Some((q, k)) != from && self.routers[q].is_some() && self.net.live(&self.topo, q, k))
            .collect();
        for (r, i) in targets {
            self.data_in_flight += 1;
            self.push(t, Event::Data { r, i, tree, hops });
        }
        let receivers: Vec<usize> =
            (0..self.topo.receivers.len()).filter(|h| self.topo.receivers[*h].link == link).collect();
        for h in receivers {
            self.received.insert((h, tree), t);
            if self.trace_on {
                let receiver = self.topo.receivers[h].name.clone();
                self.trace.push(TraceRecord::Delivered { t, receiver, tree: tree.to_string() });
            }
        }
    }

    fn on_data(&mut self, r: usize, i: usize, tree: TreeRef, hops: u8) {
        self.data_in_flight -= 1;
        if !self.net.live(&self.topo, r, i) {
            return;
        }
        let Some(router) = self.routers[r].as_mut() else { return };
        let (outs, output) = router.forward_data(self.now, tree, i);
        self.process_output(r, output);
        self.reschedule(r, false);
        if self.trace_on {
            let def = &self.topo.routers[r];
            self.trace.push(TraceRecord::Data {
                t: self.now,
                router: def.name.clone(),
                tree: tree.to_string(),
                iface: def.ifaces[i].name.clone(),
                out: outs.iter().map(|j| def.ifaces[*j].name.clone()).collect(),
            });
        }
        if hops >= DATA_HOP_LIMIT {
            return;
        }
        for j in outs {
            if self.net.live(&self.topo, r, j) {
                self.stats.data_hops += 1;
                self.put_data(self.topo.routers[r].ifaces[j].link, Some((r, j)), tree, hops + 1);
            }
        }
    }

    // ---- topology changes -------------------------------------------------

    /// Tells each router about route changes after its notification lag.
    fn update_routes(&mut self) {
        let routes = compute_routes(&self.topo, &self.net);
        for (r, table) in routes.into_iter().enumerate() {
            if self.routers[r].is_none() {
                continue;
            }
            for (source, route) in table {
                if self.notified[r].get(&source) != Some(&route) {
                    self.notified[r].insert(source, route.clone());
                    self.pending_routes += 1;
                    let t = self.now + self.topo.routers[r].lag;
                    self.push(t, Event::Route { r, epoch: self.route_epoch[r], source, route });
                }
            }
        }
    }

    fn set_membership(&mut self, h: usize, group: Ipv4Addr, joined: bool) {
        let link = self.topo.receivers[h].link;
        let before = self.link_groups(link).contains(&group);
        if joined {
            self.memberships.insert((h, group));
        } else {
            self.memberships.remove(&(h, group));
        }
        if before != self.link_groups(link).contains(&group) {
            let attached: Vec<(usize, usize)> = self.topo.attached(link).collect();
            for (r, i) in attached {
                self.drive(r, Input::Membership { iface: i, group, joined });
            }
        }
    }

    // ---- scenario actions ---------------------------------------------------

    fn router_ix(&self, name: &str) -> Result<usize, String> {
        self.topo.router_index(name).ok_or_else(|| format!("unknown router {name}"))
    }

    fn iface_ix(&self, r: usize, name: &str) -> Result<usize, String> {
        self.topo.iface_index(r, name).ok_or_else(|| format!("unknown interface {} {name}", self.topo.routers[r].name))
    }

    fn link_ix(&self, name: &str) -> Result<usize, String> {
        self.topo.link_index(name).ok_or_else(|| format!("unknown link {name}"))
    }

    fn source_ix(&self, name: &str) -> Result<usize, String> {
        self.topo.source_index(name).ok_or_else(|| format!("unknown source {name}"))
    }

    fn receiver_ix(&self, name: &str) -> Result<usize, String> {
        self.topo.receiver_index(name).ok_or_else(|| format!("unknown receiver {name}"))
    }

    fn groups(&self, s: usize, group: Option<Ipv4Addr>) -> Result<Vec<Ipv4Addr>, String> {
        let src = &self.topo.sources[s];
        match group {
            None => Ok(src.groups.clone()),
            Some(g) if src.groups.contains(&g) => Ok(vec![g]),
            Some(g) => Err(format!("source {} does not send to {g}", src.name)),
        }
    }

    /// The interface of router `n` on the same link as `(r, i)`.
    fn peer_ip(&self, r: usize, i: usize, n: &str) -> Result<Ipv4Addr, String> {
        let q = self.router_ix(n)?;
        let link = self.topo.routers[r].ifaces[i].link;
        self.topo.routers[q]
            .ifaces
            .iter()
            .find(|x| x.link == link)
            .map(|x| x.ip)
            .ok_or_else(|| format!("{n} is not attached to {}", self.topo.links[link].name))
    }

    fn tree(&self, source: &str, group: Ipv4Addr) -> Result<TreeRef, String> {
        let s = self.source_ix(source)?;
        self.groups(s, Some(group))?;
        Ok(TreeRef::new(self.topo.sources[s].ip, group))
    }

    /// Resolves every name an action mentions.
    fn validate(&self, a: &Action) -> Result<(), String> {
        match a {
            Action::StartSource { source, group }
            | Action::StopSource { source, group }
            | Action::SendData { source, group } => self.groups(self.source_ix(source)?, *group).map(drop),
            Action::FailRouter(r) | Action::RecoverRouter(r) => self.router_ix(r).map(drop),
            Action::FailLink(l) | Action::RecoverLink(l) | Action::SetLinkModel { link: l, .. } => {
                self.link_ix(l).map(drop)
            }
            Action::FailInterface(r, i)
            | Action::RecoverInterface(r, i)
            | Action::RebootInterface(r, i)
            | Action::SetCost { router: r, iface: i, .. } => self.iface_ix(self.router_ix(r)?, i).map(drop),
            Action::HostJoin { receiver, .. } | Action::HostLeave { receiver, .. } => {
                self.receiver_ix(receiver).map(drop)
            }
            Action::CaptureFrame { from, iface, to, .. } => {
                let r = self.router_ix(from)?;
                if let Some(i) = iface {
                    self.iface_ix(r, i)?;
                }
                if let Some(to) = to {
                    self.router_ix(to)?;
                }
                Ok(())
            }
            Action::AssertState { router, source, group, checks } => {
                let r = self.router_ix(router)?;
                self.tree(source, *group)?;
                for (k, _) in checks {
                    let parts: Vec<&str> = k.split('.').collect();
                    match parts.as_slice() {
                        ["state" | "root" | "parent" | "rpc" | "interested" | "originator"] => {}
                        ["aw" | "fwd" | "di" | "role", i] => {
                            self.iface_ix(r, i)?;
                        }
                        ["upstream" | "interest" | "sync", i, n] => {
                            let i = self.iface_ix(r, i)?;
                            self.peer_ip(r, i, n)?;
                        }
                        _ => return Err(format!("unknown state key {k}")),
                    }
                }
                Ok(())
            }
            Action::AssertSync { router, iface, neighbor, .. } => {
                let r = self.router_ix(router)?;
                let i = self.iface_ix(r, iface)?;
                self.peer_ip(r, i, neighbor).map(drop)
            }
            Action::AssertAw { link, source, group, router } => {
                self.link_ix(link)?;
                self.tree(source, *group)?;
                if router != "none" {
                    self.router_ix(router)?;
                }
                Ok(())
            }
            Action::AssertReceived { receiver, source, group, .. } => {
                self.receiver_ix(receiver)?;
                self.tree(source, *group).map(drop)
            }
            Action::ReplayFrame(_)
            | Action::CaptureDigest { .. }
            | Action::AssertDigest(_)
            | Action::Check
            | Action::Mark(_) => Ok(()),
        }
    }

    fn run_event(&mut self, idx: usize) {
        let e = self.script[idx].clone();
        if self.trace_on && !self.retrying.contains_key(&idx) {
            self.trace.push(TraceRecord::Action { t: self.now, line: e.line, action: e.text.clone() });
        }
        if self.assert_grace > 0 {
            // Data arrival is a liveness property and may wait for the next
            // packet even once the control plane is quiet.
            let pending = match &e.action {
                Action::CaptureDigest { .. } => !self.settled(),
                Action::AssertReceived { expect: true, .. } => self.apply(&e.action).is_err(),
                a if a.is_assertion() => !self.settled() && self.apply(a).is_err(),
                _ => false,
            };
            if pending && self.schedule_retry(idx) {
                return;
            }
        }
        self.retrying.remove(&idx);
        let result = self.apply(&e.action);
        if matches!(e.action, Action::Check) && result.is_err() {
            self.check();
        }
        if e.action.is_assertion() || result.is_err() {
            let (ok, detail) = match result {
                Ok(()) => (true, String::new()),
                Err(d) => (false, d),
            };
            if self.trace_on {
                self.trace.push(TraceRecord::Assert {
                    t: self.now,
                    line: e.line,
                    ok,
                    text: e.text.clone(),
                    detail: detail.clone(),
                });
            }
            self.asserts.push(AssertResult { t: self.now, line: e.line, text: e.text, ok, detail });
        }
    }

    /// Re-queues an observation while its grace lasts; false once it ran out.
    fn schedule_retry(&mut self, idx: usize) -> bool {
        let deadline = match self.retrying.get(&idx) {
            Some(&d) => d,
            None => {
                let next_action = (idx + 1..self.script.len())
                    .find(|&j| !self.script[j].action.is_assertion())
                    .map_or(Time::MAX, |j| self.script_at[j]);
                let d = (self.now + self.assert_grace).min(next_action);
                self.retrying.insert(idx, d);
                d
            }
        };
        let retry = self.now + ASSERT_RETRY;
        if retry < deadline {
            self.push(retry, Event::Script(idx));
            true
        } else {
            false
        }
    }

    /// Executes one action; assertions report mismatches as `Err`.
    pub fn apply(&mut self, a: &Action) -> Result<(), String> {
        match a {
            Action::StartSource { source, group } => {
                let s = self.source_ix(source)?;
                for g in self.groups(s, *group)? {
                    self.next_epoch += 1;
                    let epoch = self.next_epoch;
                    self.sources_on.insert((s, g), epoch);
                    self.emit_data(s, g);
                    let next = self.now + self.topo.params.data_interval;
                    self.push(next, Event::SourceTick { s, group: g, epoch });
                }
            }
            Action::StopSource { source, group } => {
                let s = self.source_ix(source)?;
                for g in self.groups(s, *group)? {
                    self.sources_on.remove(&(s, g));
                }
            }
            Action::SendData { source, group } => {
                let s = self.source_ix(source)?;
                for g in self.groups(s, *group)? {
                    self.emit_data(s, g);
                }
            }
            Action::FailRouter(name) => {
                let r = self.router_ix(name)?;
                self.routers[r] = None;
                self.wake_at[r] = None;
                self.route_epoch[r] += 1;
                self.net.router_up[r] = false;
                self.update_routes();
            }
            Action::RecoverRouter(name) => {
                let r = self.router_ix(name)?;
                if self.routers[r].is_none() {
                    self.net.router_up[r] = true;
                    self.boot(r);
                    self.update_routes();
                }
            }
            Action::FailLink(l) | Action::RecoverLink(l) => {
                let l = self.link_ix(l)?;
                let up = matches!(a, Action::RecoverLink(_));
                self.links[l].up = up;
                self.net.link_up[l] = up;
                self.update_routes();
            }
            Action::FailInterface(r, i) | Action::RecoverInterface(r, i) => {
                let r = self.router_ix(r)?;
                let i = self.iface_ix(r, i)?;
                let up = matches!(a, Action::RecoverInterface(..));
                self.net.iface_up[r][i] = up;
                self.drive(r, if up { Input::InterfaceUp(i) } else { Input::InterfaceDown(i) });
                self.update_routes();
            }
            Action::RebootInterface(r, i) => {
                let r = self.router_ix(r)?;
                let i = self.iface_ix(r, i)?;
                self.drive(r, Input::InterfaceDown(i));
                self.drive(r, Input::InterfaceUp(i));
            }
            Action::SetCost { router, iface, cost } => {
                let r = self.router_ix(router)?;
                let i = self.iface_ix(r, iface)?;
                self.net.costs[r][i] = *cost;
                self.update_routes();
            }
            Action::HostJoin { receiver, group } => {
                let h = self.receiver_ix(receiver)?;
                self.set_membership(h, *group, true);
            }
            Action::HostLeave { receiver, group } => {
                let h = self.receiver_ix(receiver)?;
                self.set_membership(h, *group, false);
            }
            Action::SetLinkModel { link, change } => {
                let l = self.link_ix(link)?;
                let m = &mut self.links[l];
                m.delay = change.delay.unwrap_or(m.delay);
                m.jitter = change.jitter.unwrap_or(m.jitter);
                m.loss = change.loss.unwrap_or(m.loss);
                m.duplicate = change.duplicate.unwrap_or(m.duplicate);
                m.reorder = change.reorder.unwrap_or(m.reorder);
                if let Some(up) = change.up {
                    m.up = up;
                    self.net.link_up[l] = up;
                    self.update_routes();
                }
            }
            Action::CaptureFrame { name, msg_type, from, iface, to, nth } => {
                let r = self.router_ix(from)?;
                let i = iface.as_deref().map(|x| self.iface_ix(r, x)).transpose()?;
                let to = to.as_deref().map(|x| self.router_ix(x)).transpose()?;
                let reaches = |f: &FrameRecord, q: usize| {
                    self.topo.routers[q]
                        .ifaces
                        .iter()
                        .any(|x| x.ip == f.dst || (f.dst.is_multicast() && x.link == f.link))
                };
                let mut matching = self
                    .frames
                    .iter()
                    .filter(|f| f.router == r && f.msg_type == *msg_type)
                    .filter(|f| i.is_none_or(|i| f.iface == i))
                    .filter(|f| to.is_none_or(|q| reaches(f, q)));
                let found = match nth {
                    Nth::Index(n) => matching.nth(n.saturating_sub(1)),
                    Nth::Last => matching.next_back(),
                };
                let rec = found.cloned().ok_or_else(|| format!("no {} frame from {from} matches", msg_type.name()))?;
                self.captures.insert(name.clone(), rec);
            }
            Action::ReplayFrame(name) => {
                let rec = self.captures.get(name).cloned().ok_or_else(|| format!("unknown capture {name}"))?;
                let id = self.next_frame;
                self.next_frame += 1;
                if self.trace_on {
                    self.trace.push(TraceRecord::Send {
                        t: self.now,
                        frame: id,
                        router: "replay".into(),
                        iface: String::new(),
                        link: self.topo.links[rec.link].name.clone(),
                        msg_type: rec.msg_type.name().into(),
                        dst: rec.dst.to_string(),
                        retransmission: false,
                        detail: format!("copy of frame {}", rec.id),
                    });
                }
                if self.net.link_up[rec.link] {
                    self.broadcast(rec.link, rec.src, rec.dst, rec.bytes, id, rec.msg_type != MsgType::Hello);
                }
            }
            Action::CaptureDigest { name, mode } => {
                let d = self.digests(*mode);
                self.digests.insert(name.clone(), (*mode, d));
            }
            Action::AssertDigest(name) => {
                let (mode, before) = self.digests.get(name).cloned().ok_or_else(|| format!("unknown digest {name}"))?;
                let now = self.digests(mode);
                if let Some((b, n)) = before.iter().zip(&now).find(|(b, n)| b != n) {
                    let line = b.lines().zip(n.lines()).find(|(x, y)| x != y);
                    return Err(match line {
                        Some((x, y)) => format!("digest changed: `{}` became `{}`", x.trim(), y.trim()),
                        None => format!("digest changed:\n{b}---\n{n}"),
                    });
                }
            }
            Action::AssertState { router, source, group, checks } => {
                let r = self.router_ix(router)?;
                let tree = self.tree(source, *group)?;
                let mut bad = Vec::new();
                for (k, want) in checks {
                    let got = self.state_value(r, tree, k)?;
                    if !value_matches(&got, want) {
                        bad.push(format!("{k}={got} (want {want})"));
                    }
                }
                if !bad.is_empty() {
                    return Err(bad.join(", "));
                }
            }
            Action::AssertSync { router, iface, neighbor, state } => {
                let r = self.router_ix(router)?;
                let i = self.iface_ix(r, iface)?;
                let ip = self.peer_ip(r, i, neighbor)?;
                let got = self.routers[r]
                    .as_ref()
                    .and_then(|x| x.ifaces[i].neighbors.get(&ip))
                    .map_or(SyncState::Unknown, |n| n.sync_state);
                if got != *state {
                    return Err(format!("sync state {got}"));
                }
            }
            Action::AssertAw { link, source, group, router } => {
                let l = self.link_ix(link)?;
                let tree = self.tree(source, *group)?;
                let got = self.assert_winners(l, tree);
                let want: Vec<String> = if router == "none" { vec![] } else { vec![router.clone()] };
                if got != want {
                    return Err(format!("assert winners {got:?}"));
                }
            }
            Action::AssertReceived { receiver, source, group, expect, since } => {
                let h = self.receiver_ix(receiver)?;
                let tree = self.tree(source, *group)?;
                let last = self.received.get(&(h, tree)).copied();
                let got = last.is_some_and(|t| t >= *since);
                if got != *expect {
                    return Err(format!("last data at {}", last.map_or("never".into(), hpim_core::fmt_time)));
                }
            }
            Action::Check => {
                let v = self.evaluate();
                if let Some(first) = v.first() {
                    return Err(format!("{} violation(s); first: {first}", v.len()));
                }
            }
            Action::Mark(_) => {}
        }
        Ok(())
    }

    /// Routers that are ACTIVE and consider their interface on `link` the
    /// assert winner for `tree`.
    pub fn assert_winners(&self, link: usize, tree: TreeRef) -> Vec<String> {
        self.topo
            .attached(link)
            .filter(|&(q, k)| self.net.live(&self.topo, q, k))
            .filter_map(|(q, k)| {
                let view = self.routers[q].as_ref()?.view(tree);
                let v = view.iface(k)?;
                (view.state == hpim_core::TreeState::Active && v.is_aw() && !v.source_attached)
                    .then(|| self.topo.routers[q].name.clone())
            })
            .collect()
    }

    fn state_value(&self, r: usize, tree: TreeRef, key: &str) -> Result<String, String> {
        let Some(router) = &self.routers[r] else { return Ok("DOWN".into()) };
        let view = router.view(tree);
        let yn = |b: bool| if b { "yes" } else { "no" }.to_string();
        let parts: Vec<&str> = key.split('.').collect();
        Ok(match parts.as_slice() {
            ["state"] => view.state.to_string(),
            ["root"] => view.root.map_or("none".into(), |i| router.ifaces[i].name().to_string()),
            ["parent"] => view.parent.map_or("none".into(), |(ip, _)| self.name_of(ip)),
            ["rpc"] => {
                if view.rpc == Metric::INFINITE {
                    "inf".into()
                } else {
                    view.rpc.rpc.to_string()
                }
            }
            ["interested"] => yn(view.interested),
            ["originator"] => yn(view.originator),
            [field, i] => {
                let i = self.iface_ix(r, i)?;
                let v = view.iface(i);
                match *field {
                    "aw" => match v.map(|v| v.aw) {
                        Some(AwView::Myself) => "self".into(),
                        Some(AwView::Neighbor(ip)) => self.name_of(ip),
                        _ => "none".into(),
                    },
                    "fwd" => yn(v.is_some_and(|v| v.forwarding)),
                    "di" => yn(v.is_some_and(|v| v.di)),
                    "role" => v.map_or("down".into(), |v| format!("{:?}", v.role).to_lowercase()),
                    _ => return Err(format!("unknown state key {key}")),
                }
            }
            [field, i, n] => {
                let i = self.iface_ix(r, i)?;
                let ip = self.peer_ip(r, i, n)?;
                let rec = router.ifaces[i].neighbors.get(&ip);
                match *field {
                    "upstream" => rec.and_then(|x| x.upstream.get(&tree)).map_or("no".into(), |m| m.rpc.to_string()),
                    "interest" => rec.and_then(|x| x.interest.get(&tree)).map_or("none".into(), |b| yn(*b)),
                    "sync" => rec.map_or(SyncState::Unknown, |x| x.sync_state).to_string(),
                    _ => return Err(format!("unknown state key {key}")),
                }
            }
            _ => return Err(format!("unknown state key {key}")),
        })
    }
}

/// `yes` also matches a numeric value, so `upstream.i0.R1=yes` accepts any RPC.
fn value_matches(got: &str, want: &str) -> bool {
    got.eq_ignore_ascii_case(want) || (want == "yes" && got.parse::<u32>().is_ok())
}
