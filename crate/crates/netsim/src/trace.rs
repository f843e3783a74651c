// SPDX-License-Identifier: Apache-2.0

//! JSON Lines trace records.

use hpim_core::wire::{Body, Message};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Send {
        t: u64,
        frame: u64,
        router: String,
        iface: String,
        link: String,
        msg_type: String,
        dst: String,
        retransmission: bool,
        detail: String,
    },
    Recv {
        t: u64,
        frame: u64,
        router: String,
        iface: String,
        msg_type: String,
    },
    Drop {
        t: u64,
        frame: u64,
        link: String,
        reason: String,
    },
    DecodeError {
        t: u64,
        frame: u64,
        router: String,
        iface: String,
        error: String,
    },
    State {
        t: u64,
        router: String,
        change: serde_json::Value,
    },
    Data {
        t: u64,
        router: String,
        tree: String,
        iface: String,
        out: Vec<String>,
    },
    Delivered {
        t: u64,
        receiver: String,
        tree: String,
    },
    Action {
        t: u64,
        line: usize,
        action: String,
    },
    Assert {
        t: u64,
        line: usize,
        ok: bool,
        text: String,
        detail: String,
    },
    Violation {
        t: u64,
        property: String,
        detail: String,
    },
    Digest {
        t: u64,
        router: String,
        mode: String,
        digest: String,
    },
}

impl TraceRecord {
    pub fn time(&self) -> u64 {
        match self {
            TraceRecord::Send { t, .. }
            | TraceRecord::Recv { t, .. }
            | TraceRecord::Drop { t, .. }
            | TraceRecord::DecodeError { t, .. }
            | TraceRecord::State { t, .. }
            | TraceRecord::Data { t, .. }
            | TraceRecord::Delivered { t, .. }
            | TraceRecord::Action { t, .. }
            | TraceRecord::Assert { t, .. }
            | TraceRecord::Violation { t, .. }
            | TraceRecord::Digest { t, .. } => *t,
        }
    }
}

/// One-line human summary of a message's fields.
pub fn summarize(msg: &Message) -> String {
    let bt = msg.boot_time;
    match &msg.body {
        Body::Hello(h) => format!("bt={bt} hold={} cp={:?}", h.hold_time, h.checkpoint_sn),
        Body::Sync(s) => format!(
            "bt={bt} sync_sn={} M={} m={} my_ssn={} nei_ssn={} nei_bt={} trees={}",
            s.sync_sn,
            u8::from(s.master),
            u8::from(s.more),
            s.my_snapshot_sn,
            s.neighbor_snapshot_sn,
            s.neighbor_boot_time,
            s.trees.len()
        ),
        Body::IamUpstream(u) => format!("bt={bt} sn={} tree={} rpc={}", u.sn, u.tree, u.metric),
        Body::IamNoLongerUpstream(m) | Body::Interest(m) | Body::NoInterest(m) => {
            format!("bt={bt} sn={} tree={}", m.sn, m.tree)
        }
        Body::Ack(a) => format!(
            "bt={bt} ack_sn={} tree={} nei_bt={} nei_ssn={} my_ssn={}",
            a.neighbor_sn, a.tree, a.neighbor_boot_time, a.neighbor_snapshot_sn, a.my_snapshot_sn
        ),
    }
}

pub fn write_jsonl(records: &[TraceRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<TraceRecord>, String> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}
