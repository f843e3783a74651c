// SPDX-License-Identifier: Apache-2.0

//! Scenario scripts.
//!
//! ```text
//! topology <path>                 # relative to the scenario file
//! set <param> <value>             # same names as topology `param`
//! end <time>
//! at <time>[~<time>] <action> ...
//! ```
//!
//! A `~` range makes the instant random within the range; the simulator
//! draws it from its seeded generator.
//!
//! Actions:
//!
//! ```text
//! start_source <src> [group]      stop_source <src> [group]     send_data <src> [group]
//! fail_router <r>                 recover_router <r>
//! fail_link <l>                   recover_link <l>
//! fail_interface <r> <if>         recover_interface <r> <if>    reboot_interface <r> <if>
//! set_cost <r> <if> <cost>
//! host_join <rcv> <group>         host_leave <rcv> <group>
//! set_link_model <l> [delay <t>] [jitter <t>] [loss <p>] [dup <p>] [reorder on|off] [up on|off]
//! capture_frame <name> <type> from <r> [iface <if>] [to <r>] [nth <n>|last]
//! replay_frame <name>
//! capture_digest <name> [full|protocol]
//! assert_digest <name>
//! assert_state <r> <src> <group> key=value ...
//! assert_sync <r> <if> <neighbor-router> <STATE>
//! assert_aw <link> <src> <group> <router|none>
//! assert_received <rcv> <src> <group> yes|no [since <time>]
//! check
//! mark <label>
//! ```
//!
//! `assert_state` keys: `state`, `root`, `parent` (router name or `none`),
//! `rpc`, `interested`, `aw.<if>` (`self`, a router name or `none`),
//! `fwd.<if>`, `di.<if>`.

use crate::parse::{parse_prob, parse_time, ParseError};
use hpim_core::wire::MsgType;
use hpim_core::{DigestMode, SyncState, Time};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub enum Nth {
    Index(usize),
    Last,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkChange {
    pub delay: Option<Time>,
    pub jitter: Option<Time>,
    pub loss: Option<f64>,
    pub duplicate: Option<f64>,
    pub reorder: Option<bool>,
    pub up: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    StartSource { source: String, group: Option<Ipv4Addr> },
    StopSource { source: String, group: Option<Ipv4Addr> },
    SendData { source: String, group: Option<Ipv4Addr> },
    FailRouter(String),
    RecoverRouter(String),
    FailLink(String),
    RecoverLink(String),
    FailInterface(String, String),
    RecoverInterface(String, String),
    RebootInterface(String, String),
    SetCost { router: String, iface: String, cost: u32 },
    HostJoin { receiver: String, group: Ipv4Addr },
    HostLeave { receiver: String, group: Ipv4Addr },
    SetLinkModel { link: String, change: LinkChange },
    CaptureFrame { name: String, msg_type: MsgType, from: String, iface: Option<String>, to: Option<String>, nth: Nth },
    ReplayFrame(String),
    CaptureDigest { name: String, mode: DigestMode },
    AssertDigest(String),
    AssertState { router: String, source: String, group: Ipv4Addr, checks: Vec<(String, String)> },
    AssertSync { router: String, iface: String, neighbor: String, state: SyncState },
    AssertAw { link: String, source: String, group: Ipv4Addr, router: String },
    AssertReceived { receiver: String, source: String, group: Ipv4Addr, expect: bool, since: Time },
    Check,
    Mark(String),
}

impl Action {
    pub fn is_assertion(&self) -> bool {
        matches!(
            self,
            Action::AssertDigest(_)
                | Action::AssertState { .. }
                | Action::AssertSync { .. }
                | Action::AssertAw { .. }
                | Action::AssertReceived { .. }
                | Action::Check
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEvent {
    pub at: Time,
    /// Upper end of a random instant.
    pub until: Option<Time>,
    pub action: Action,
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub name: String,
    pub topology: Option<PathBuf>,
    pub params: Vec<(String, String)>,
    pub events: Vec<ScenarioEvent>,
    pub end: Option<Time>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ParseError> {
        let text = std::fs::read_to_string(path).map_err(|e| ParseError::io(path, e))?;
        let mut s = Scenario::parse(&text)?;
        s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let (Some(t), Some(dir)) = (s.topology.as_mut(), path.parent()) {
            *t = dir.join(&*t);
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Scenario, ParseError> {
        let mut s = Scenario::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |msg: String| ParseError::at(line, msg);
            let body = raw.split('#').next().unwrap_or("").trim();
            let words: Vec<&str> = body.split_whitespace().collect();
            let Some((&kw, rest)) = words.split_first() else { continue };
            match (kw, rest) {
                ("topology", [p]) => s.topology = Some(PathBuf::from(p)),
                ("set", [k, v]) => s.params.push((k.to_string(), v.to_string())),
                ("end", [t]) => s.end = Some(parse_time(t).map_err(err)?),
                ("at", [t, action @ ..]) if !action.is_empty() => {
                    let (at, until) = match t.split_once('~') {
                        Some((a, b)) => {
                            let (a, b) = (parse_time(a).map_err(err)?, parse_time(b).map_err(err)?);
                            if b < a {
                                return Err(err("empty time range".into()));
                            }
                            (a, Some(b))
                        }
                        None => (parse_time(t).map_err(err)?, None),
                    };
                    let action = parse_action(action).map_err(err)?;
                    s.events.push(ScenarioEvent { at, until, action, line, text: action_text(body) });
                }
                _ => return Err(err(format!("cannot parse: {body}"))),
            }
        }
        Ok(s)
    }

    /// Latest instant any event may run at.
    pub fn last_event(&self) -> Time {
        self.events.iter().map(|e| e.until.unwrap_or(e.at)).max().unwrap_or(0)
    }
}

fn action_text(line: &str) -> String {
    line.split_whitespace().skip(2).collect::<Vec<_>>().join(" ")
}

fn ip(s: &str) -> Result<Ipv4Addr, String> {
    s.parse().map_err(|_| format!("bad address {s}"))
}

fn opt_group(rest: &[&str]) -> Result<Option<Ipv4Addr>, String> {
    match rest {
        [] => Ok(None),
        [g] => ip(g).map(Some),
        _ => Err("too many arguments".into()),
    }
}

fn on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" | "yes" | "true" => Ok(true),
        "off" | "no" | "false" => Ok(false),
        _ => Err(format!("expected on/off, got {s}")),
    }
}

pub fn parse_sync_state(s: &str) -> Result<SyncState, String> {
    Ok(match s.to_ascii_uppercase().as_str() {
        "UNKNOWN" => SyncState::Unknown,
        "MASTER" => SyncState::Master,
        "SLAVE" => SyncState::Slave,
        "SYNCED" => SyncState::Synced,
        _ => return Err(format!("unknown sync state {s}")),
    })
}

fn parse_action(w: &[&str]) -> Result<Action, String> {
    let s = |x: &str| x.to_string();
    Ok(match w {
        ["start_source", src, rest @ ..] => Action::StartSource { source: s(src), group: opt_group(rest)? },
        ["stop_source", src, rest @ ..] => Action::StopSource { source: s(src), group: opt_group(rest)? },
        ["send_data", src, rest @ ..] => Action::SendData { source: s(src), group: opt_group(rest)? },
        ["fail_router", r] => Action::FailRouter(s(r)),
        ["recover_router", r] => Action::RecoverRouter(s(r)),
        ["fail_link", l] => Action::FailLink(s(l)),
        ["recover_link", l] => Action::RecoverLink(s(l)),
        ["fail_interface", r, i] => Action::FailInterface(s(r), s(i)),
        ["recover_interface", r, i] => Action::RecoverInterface(s(r), s(i)),
        ["reboot_interface", r, i] => Action::RebootInterface(s(r), s(i)),
        ["set_cost", r, i, c] => {
            Action::SetCost { router: s(r), iface: s(i), cost: c.parse().map_err(|_| format!("bad cost {c}"))? }
        }
        ["host_join", h, g] => Action::HostJoin { receiver: s(h), group: ip(g)? },
        ["host_leave", h, g] => Action::HostLeave { receiver: s(h), group: ip(g)? },
        ["set_link_model", l, opts @ ..] => {
            let mut c = LinkChange::default();
            for pair in opts.chunks(2) {
                let [k, v] = pair else { return Err("set_link_model options come in pairs".into()) };
                match *k {
                    "delay" => c.delay = Some(parse_time(v)?),
                    "jitter" => c.jitter = Some(parse_time(v)?),
                    "loss" => c.loss = Some(parse_prob(v)?),
                    "dup" => c.duplicate = Some(parse_prob(v)?),
                    "reorder" => c.reorder = Some(on_off(v)?),
                    "up" => c.up = Some(on_off(v)?),
                    _ => return Err(format!("unknown link option {k}")),
                }
            }
            Action::SetLinkModel { link: s(l), change: c }
        }
        ["capture_frame", name, ty, "from", r, opts @ ..] => {
            let msg_type = MsgType::parse(ty).ok_or_else(|| format!("unknown message type {ty}"))?;
            let (mut iface, mut to, mut nth) = (None, None, Nth::Index(1));
            let mut it = opts.iter();
            while let Some(k) = it.next() {
                match *k {
                    "iface" => iface = Some(s(it.next().ok_or("iface needs a name")?)),
                    "to" => to = Some(s(it.next().ok_or("to needs a router")?)),
                    "nth" => {
                        let v = it.next().ok_or("nth needs a value")?;
                        nth = Nth::Index(v.parse().map_err(|_| format!("bad index {v}"))?);
                    }
                    "last" => nth = Nth::Last,
                    _ => return Err(format!("unknown capture option {k}")),
                }
            }
            Action::CaptureFrame { name: s(name), msg_type, from: s(r), iface, to, nth }
        }
        ["replay_frame", name] => Action::ReplayFrame(s(name)),
        ["capture_digest", name, rest @ ..] => Action::CaptureDigest {
            name: s(name),
            mode: match rest {
                [] | ["full"] => DigestMode::Full,
                ["protocol"] => DigestMode::Protocol,
                _ => return Err("digest mode is full or protocol".into()),
            },
        },
        ["assert_digest", name] => Action::AssertDigest(s(name)),
        ["assert_state", r, src, g, checks @ ..] => {
            let mut out = Vec::new();
            for c in checks {
                let (k, v) = c.split_once('=').ok_or_else(|| format!("expected key=value, got {c}"))?;
                out.push((k.to_string(), v.to_string()));
            }
            Action::AssertState { router: s(r), source: s(src), group: ip(g)?, checks: out }
        }
        ["assert_sync", r, i, n, st] => {
            Action::AssertSync { router: s(r), iface: s(i), neighbor: s(n), state: parse_sync_state(st)? }
        }
        ["assert_aw", l, src, g, r] => Action::AssertAw { link: s(l), source: s(src), group: ip(g)?, router: s(r) },
        ["assert_received", h, src, g, yn, rest @ ..] => Action::AssertReceived {
            receiver: s(h),
            source: s(src),
            group: ip(g)?,
            expect: on_off(yn)?,
            since: match rest {
                [] => 0,
                ["since", t] => parse_time(t)?,
                _ => return Err("expected since <time>".into()),
            },
        },
        ["check"] => Action::Check,
        ["mark", label @ ..] => Action::Mark(label.join(" ")),
        _ => return Err(format!("unknown action: {}", w.join(" "))),
    })
}
