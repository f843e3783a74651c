// SPDX-License-Identifier: Apache-2.0

//! Topology description files.
//!
//! Line-oriented; `#` starts a comment. Directives:
//!
//! ```text
//! link <name> p2p|shared [delay <t>] [jitter <t>] [loss <p>] [dup <p>] [reorder]
//! router <name> [interest di|ndi] [key <secret>] [lag <t>] [feasibility off]
//! iface <router> <name> <ipv4> <link> [cost <n>]
//! source <name> <ipv4> <link> group <g> [group <g> ...]
//! receiver <name> <link>
//! param <name> <value>
//! ```
//!
//! Routers must be declared before their interfaces; interface order within
//! a router defines interface ids.

use crate::link::LinkModel;
use crate::parse::{parse_prob, parse_time, ParseError};
use hpim_core::{Time, Timers};
use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    PointToPoint,
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDef {
    pub name: String,
    pub kind: LinkKind,
    pub model: LinkModel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IfaceDef {
    pub name: String,
    pub ip: Ipv4Addr,
    pub link: usize,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterDef {
    pub name: String,
    pub ifaces: Vec<IfaceDef>,
    pub initial_di: Option<bool>,
    pub key: Option<String>,
    pub lag: Time,
    pub feasibility: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDef {
    pub name: String,
    pub ip: Ipv4Addr,
    pub link: usize,
    pub groups: Vec<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverDef {
    pub name: String,
    pub link: usize,
}

/// Protocol parameters shared by every router of a topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Params {
    pub timers: Timers,
    pub fragment_size: usize,
    pub max_sn: u32,
    pub initial_di: bool,
    pub data_interval: Time,
    pub preference: u32,
    /// Off only to show what the parent feasibility condition prevents.
    pub feasibility: bool,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            timers: Timers::default(),
            fragment_size: hpim_core::DEFAULT_FRAGMENT_SIZE,
            max_sn: u32::MAX,
            initial_di: false,
            data_interval: 10 * hpim_core::SECOND,
            preference: 0,
            feasibility: true,
        }
    }
}

impl Params {
    /// Applies `name value`; names match the CLI override flags.
    pub fn set(&mut self, name: &str, value: &str) -> Result<(), String> {
        let t = &mut self.timers;
        let name = name.replace('-', "_");
        match name.as_str() {
            "hello_period" => t.hello_period = parse_time(value)?,
            "hold_time" => t.hold_time = parse_time(value)?,
            "sat" | "source_active" => t.source_active = parse_time(value)?,
            "retransmit_timeout" | "retransmit" => t.retransmit = parse_time(value)?,
            "sync_retransmit" => t.sync_retransmit = parse_time(value)?,
            "sync_attempts" => t.sync_attempts = value.parse().map_err(|_| format!("bad count {value}"))?,
            "al_hysteresis" => t.al_hysteresis = parse_time(value)?,
            "fragment_size" => self.fragment_size = value.parse().map_err(|_| format!("bad size {value}"))?,
            "max_sn" => self.max_sn = value.parse().map_err(|_| format!("bad max_sn {value}"))?,
            "initial_interest" => self.initial_di = parse_interest(value)?,
            "data_interval" => self.data_interval = parse_time(value)?,
            "preference" => self.preference = value.parse().map_err(|_| format!("bad preference {value}"))?,
            "feasibility" => {
                self.feasibility = match value {
                    "on" => true,
                    "off" => false,
                    _ => return Err(format!("expected on or off, got {value}")),
                }
            }
            _ => return Err(format!("unknown parameter {name}")),
        }
        Ok(())
    }
}

fn parse_interest(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "di" => Ok(true),
        "ndi" => Ok(false),
        _ => Err(format!("expected di or ndi, got {v}")),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Topology {
    pub links: Vec<LinkDef>,
    pub routers: Vec<RouterDef>,
    pub sources: Vec<SourceDef>,
    pub receivers: Vec<ReceiverDef>,
    pub params: Params,
}

impl Topology {
    pub fn load(path: &Path) -> Result<Topology, ParseError> {
        let text = std::fs::read_to_string(path).map_err(|e| ParseError::io(path, e))?;
        Topology::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Topology, ParseError> {
        let mut t = Topology::default();
        let mut links: HashMap<String, usize> = HashMap::new();
        let mut routers: HashMap<String, usize> = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |msg: String| ParseError::at(line, msg);
            let words: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            let Some((&kw, rest)) = words.split_first() else { continue };
            match kw {
                "link" => {
                    let [name, kind, opts @ ..] = rest else { return Err(err("link <name> <kind>".into())) };
                    let kind = match *kind {
                        "p2p" => LinkKind::PointToPoint,
                        "shared" => LinkKind::Shared,
                        k => return Err(err(format!("unknown link kind {k}"))),
                    };
                    let mut model = LinkModel::default();
                    let mut it = opts.iter();
                    while let Some(&o) = it.next() {
                        let mut val = || it.next().copied().ok_or_else(|| err(format!("{o} needs a value")));
                        match o {
                            "delay" => model.delay = parse_time(val()?).map_err(err)?,
                            "jitter" => model.jitter = parse_time(val()?).map_err(err)?,
                            "loss" => model.loss = parse_prob(val()?).map_err(err)?,
                            "dup" => model.duplicate = parse_prob(val()?).map_err(err)?,
                            "reorder" => model.reorder = true,
                            _ => return Err(err(format!("unknown link option {o}"))),
                        }
                    }
                    if links.insert(name.to_string(), t.links.len()).is_some() {
                        return Err(err(format!("duplicate link {name}")));
                    }
                    t.links.push(LinkDef { name: name.to_string(), kind, model });
                }
                "router" => {
                    let [name, opts @ ..] = rest else { return Err(err("router <name>".into())) };
                    let mut r = RouterDef {
                        name: name.to_string(),
                        ifaces: vec![],
                        initial_di: None,
                        key: None,
                        lag: 0,
                        feasibility: true,
                    };
                    let mut it = opts.iter();
                    while let Some(&o) = it.next() {
                        let val = it.next().copied().ok_or_else(|| err(format!("{o} needs a value")))?;
                        match o {
                            "interest" => r.initial_di = Some(parse_interest(val).map_err(err)?),
                            "key" => r.key = Some(val.to_string()),
                            "lag" => r.lag = parse_time(val).map_err(err)?,
                            "feasibility" => r.feasibility = val != "off",
                            _ => return Err(err(format!("unknown router option {o}"))),
                        }
                    }
                    if routers.insert(name.to_string(), t.routers.len()).is_some() {
                        return Err(err(format!("duplicate router {name}")));
                    }
                    t.routers.push(r);
                }
                "iface" => {
                    let [router, name, ip, link, opts @ ..] = rest else {
                        return Err(err("iface <router> <name> <ip> <link>".into()));
                    };
                    let r = *routers.get(*router).ok_or_else(|| err(format!("unknown router {router}")))?;
                    let link = *links.get(*link).ok_or_else(|| err(format!("unknown link {link}")))?;
                    let ip: Ipv4Addr = ip.parse().map_err(|_| err(format!("bad address {ip}")))?;
                    let cost = match opts {
                        [] => 1,
                        ["cost", c] => c.parse().map_err(|_| err(format!("bad cost {c}")))?,
                        _ => return Err(err("expected cost <n>".into())),
                    };
                    if t.routers[r].ifaces.iter().any(|i| i.name == *name) {
                        return Err(err(format!("duplicate interface {router} {name}")));
                    }
                    t.routers[r].ifaces.push(IfaceDef { name: name.to_string(), ip, link, cost });
                }
                "source" => {
                    let [name, ip, link, groups @ ..] = rest else {
                        return Err(err("source <name> <ip> <link> group <g>".into()));
                    };
                    let link = *links.get(*link).ok_or_else(|| err(format!("unknown link {link}")))?;
                    let ip = ip.parse().map_err(|_| err(format!("bad address {ip}")))?;
                    let mut gs = Vec::new();
                    for pair in groups.chunks(2) {
                        match pair {
                            ["group", g] => gs.push(g.parse().map_err(|_| err(format!("bad group {g}")))?),
                            _ => return Err(err("expected group <g>".into())),
                        }
                    }
                    if gs.is_empty() {
                        return Err(err("source needs a group".into()));
                    }
                    t.sources.push(SourceDef { name: name.to_string(), ip, link, groups: gs });
                }
                "receiver" => {
                    let [name, link] = rest else { return Err(err("receiver <name> <link>".into())) };
                    let link = *links.get(*link).ok_or_else(|| err(format!("unknown link {link}")))?;
                    t.receivers.push(ReceiverDef { name: name.to_string(), link });
                }
                "param" => {
                    let [name, value] = rest else { return Err(err("param <name> <value>".into())) };
                    t.params.set(name, value).map_err(err)?;
                }
                _ => return Err(err(format!("unknown directive {kw}"))),
            }
        }
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), ParseError> {
        let mut seen = HashMap::new();
        for r in &self.routers {
            for i in &r.ifaces {
                if let Some(other) = seen.insert(i.ip, &r.name) {
                    return Err(ParseError::at(0, format!("address {} used by {other} and {}", i.ip, r.name)));
                }
            }
        }
        for (l, link) in self.links.iter().enumerate() {
            let n = self.attached(l).count();
            if link.kind == LinkKind::PointToPoint && n > 2 {
                return Err(ParseError::at(0, format!("p2p link {} has {n} interfaces", link.name)));
            }
        }
        Ok(())
    }

    /// (router, interface) pairs attached to a link.
    pub fn attached(&self, link: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.routers.iter().enumerate().flat_map(move |(r, def)| {
            def.ifaces.iter().enumerate().filter(move |(_, i)| i.link == link).map(move |(i, _)| (r, i))
        })
    }

    pub fn router_index(&self, name: &str) -> Option<usize> {
        self.routers.iter().position(|r| r.name == name)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn source_index(&self, name: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.name == name)
    }

    pub fn receiver_index(&self, name: &str) -> Option<usize> {
        self.receivers.iter().position(|s| s.name == name)
    }

    pub fn iface_index(&self, router: usize, name: &str) -> Option<usize> {
        self.routers[router].ifaces.iter().position(|i| i.name == name)
    }

    /// Looks up the router and interface owning an address.
    pub fn owner_of(&self, ip: Ipv4Addr) -> Option<(usize, usize)> {
        self.routers.iter().enumerate().find_map(|(r, def)| def.ifaces.iter().position(|i| i.ip == ip).map(|i| (r, i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_small_topology() {
        let t = Topology::parse(
            "link a p2p delay 2ms\nlink s shared # src\nrouter R1\niface R1 i0 10.0.0.1 s cost 10\n\
             iface R1 i1 10.0.1.1 a\nrouter R2 interest di\niface R2 i0 10.0.1.2 a cost 5\n\
             source S 10.0.0.100 s group 232.1.1.1\nparam hello_period 5s\n",
        )
        .unwrap();
        assert_eq!(t.routers.len(), 2);
        assert_eq!(t.links[0].model.delay, 2 * hpim_core::MILLIS);
        assert_eq!(t.routers[0].ifaces[1].cost, 1);
        assert_eq!(t.routers[1].initial_di, Some(true));
        assert_eq!(t.attached(0).collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        assert_eq!(t.params.timers.hello_period, 5 * hpim_core::SECOND);
    }

    #[test]
    fn rejects_unknown_links() {
        let e = Topology::parse("router R1\niface R1 i0 10.0.0.1 nowhere\n").unwrap_err();
        assert_eq!(e.line, 2);
    }
}
