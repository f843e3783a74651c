// SPDX-License-Identifier: Apache-2.0

//! Canonical text rendering of router state.
//!
//! `Full` covers everything, sequencing included. `Protocol` leaves out
//! boot times and sequence numbers and reports interest only where an
//! Assert Winner needs it, so two runs that reach the same forwarding state
//! through different SN histories render identically.

use crate::router::Router;
use crate::types::{Role, TreeState};
use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DigestMode {
    Full,
    Protocol,
}

pub fn state_digest(r: &Router, mode: DigestMode) -> String {
    let full = mode == DigestMode::Full;
    let mut s = String::new();
    let _ = writeln!(s, "router {}", r.name());
    for i in &r.ifaces {
        let _ = write!(s, " iface {} {} up={}", i.name(), i.ip(), u8::from(i.up));
        if full {
            let mut seq = i.seq.clone();
            let cp = seq.checkpoint_sn_out();
            let _ = write!(s, " bt={} sn={} cp={cp}", seq.boot_time, seq.interface_sn);
        }
        let _ = writeln!(s);
        for g in &i.groups {
            let _ = writeln!(s, "  member {g}");
        }
        for n in i.neighbors.values() {
            let _ = write!(s, "  nbr {} {}", n.ip, n.sync_state);
            if full {
                let q = &n.seq;
                let _ = write!(
                    s,
                    " nbt={} nssn={} myssn={} cpin={}",
                    q.neighbor_boot_time, q.neighbor_snapshot_sn, q.my_snapshot_sn, q.checkpoint_sn_in
                );
            }
            let _ = writeln!(s);
            if full {
                for (t, sn) in &n.seq.per_tree_sn {
                    let _ = writeln!(s, "   sn {t} {sn}");
                }
                for (t, v) in &n.interest {
                    let _ = writeln!(s, "   interest {t} {}", u8::from(*v));
                }
            }
            for (t, m) in &n.upstream {
                let _ = writeln!(s, "   upstream {t} {m}");
            }
        }
        if full {
            for p in i.tx.iter() {
                let awaiting: Vec<String> = p.awaiting.iter().map(|a| a.to_string()).collect();
                let _ = writeln!(s, "  pending {} {} -> {}", p.sn, p.msg.msg_type().name(), awaiting.join(","));
            }
        }
    }
    for (t, e) in &r.trees {
        let v = &e.view;
        let root = v.root.map_or("-".to_string(), |i| r.ifaces[i].name().to_string());
        let parent = v.parent.map_or("-".to_string(), |p| p.0.to_string());
        let _ = writeln!(
            s,
            " tree {t} {} root={root} rpc={} parent={parent} originator={} interested={} source_active={}",
            v.state,
            v.rpc,
            u8::from(v.originator),
            u8::from(v.interested),
            u8::from(e.source_active)
        );
        for f in &v.ifaces {
            let role = if f.role == Role::Root { "root" } else { "nonroot" };
            // An Assert Loser's interest view is never kept current.
            let di = if full || f.is_aw() { u8::from(f.di).to_string() } else { "-".into() };
            let _ =
                writeln!(s, "  if {} {role} aw={} di={di} fwd={}", r.ifaces[f.id].name(), f.aw, u8::from(f.forwarding));
            if !full && f.is_aw() && v.state == TreeState::Active {
                for n in r.ifaces[f.id].neighbors.values().filter(|n| n.synced()) {
                    if n.upstream.contains_key(t) {
                        continue;
                    }
                    let known = n.interest.get(t).copied().unwrap_or(r.cfg.initial_di);
                    let _ = writeln!(s, "   knows {} {}", n.ip, u8::from(known));
                }
            }
        }
    }
    s
}
