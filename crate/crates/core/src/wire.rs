// SPDX-License-Identifier: Apache-2.0

//! Control message codec.
//!
//! Every message starts with a common header followed by a security block
//! and a type-specific body. All integers are big-endian.
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 8    | boot time of the sending interface      |
//! | 8      | 1    | version (1)                             |
//! | 9      | 1    | message type                            |
//! | 10     | 2    | security type (0 none, 1 HMAC-SHA256)   |
//! | 12     | 2    | security value length                   |
//! | 14     | L    | security value                          |
//! | 14+L   | ..   | body                                    |
//!
//! Bodies:
//!
//! * Hello: TLVs of `type:u16 length:u16 value`. Type 1 is the hold time
//!   (u16 seconds, mandatory), type 2 the CheckpointSN (u32). Unknown types
//!   are skipped.
//! * Sync: `my_ssn:u32 neighbor_ssn:u32 neighbor_bt:u64 flags:u8
//!   sync_sn:u16 [hold:u16]` then 16-byte tree records
//!   `source group pref:u32 rpc:u32`. The hold time is present iff the More
//!   flag is clear. Flag bits: Master `0x02`, More `0x01`.
//! * IamUpstream: `sn:u32 source group pref:u32 rpc:u32`.
//! * IamNoLongerUpstream, Interest, NoInterest: `sn:u32 source group`.
//! * Ack: `neighbor_sn:u32 source group neighbor_bt:u64
//!   neighbor_ssn:u32 my_ssn:u32`.
//!
//! The MAC covers the source address, the destination address and the
//! message with the security value zeroed.

use crate::types::{BootTime, Metric, Sn, TreeRef, PROTOCOL_VERSION};
use hmac::{Hmac, Mac};
use sha2::Sha256;
use std::net::Ipv4Addr;
use thiserror::Error;

pub const HEADER_LEN: usize = 14;
pub const SEC_NONE: u16 = 0;
pub const SEC_HMAC_SHA256: u16 = 1;
pub const MAC_LEN: usize = 32;

pub const TLV_HOLD_TIME: u16 = 1;
pub const TLV_CHECKPOINT_SN: u16 = 2;

pub const FLAG_MASTER: u8 = 0x02;
pub const FLAG_MORE: u8 = 0x01;

const SYNC_FIXED_LEN: usize = 19;
const SYNC_RECORD_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("authentication failed")]
    AuthFail,
    #[error("message truncated")]
    Truncated,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("malformed TLV")]
    MalformedTlv,
    #[error("invalid message: {0}")]
    InvalidMessage(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum MsgType {
    Hello = 1,
    Sync = 2,
    IamUpstream = 3,
    IamNoLongerUpstream = 4,
    Interest = 5,
    NoInterest = 6,
    Ack = 7,
}

impl MsgType {
    pub const ALL: [MsgType; 7] = [
        MsgType::Hello,
        MsgType::Sync,
        MsgType::IamUpstream,
        MsgType::IamNoLongerUpstream,
        MsgType::Interest,
        MsgType::NoInterest,
        MsgType::Ack,
    ];

    pub fn from_u8(v: u8) -> Option<MsgType> {
        MsgType::ALL.into_iter().find(|t| *t as u8 == v)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Hello => "Hello",
            MsgType::Sync => "Sync",
            MsgType::IamUpstream => "IamUpstream",
            MsgType::IamNoLongerUpstream => "IamNoLongerUpstream",
            MsgType::Interest => "Interest",
            MsgType::NoInterest => "NoInterest",
            MsgType::Ack => "Ack",
        }
    }

    pub fn parse(s: &str) -> Option<MsgType> {
        MsgType::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTlv {
    pub kind: u16,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    /// Seconds; zero asks the receiver to drop this neighbor.
    pub hold_time: u16,
    pub checkpoint_sn: Option<Sn>,
    /// Unrecognised TLVs, kept only by [`decode_lenient`].
    pub unknown: Vec<RawTlv>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncTree {
    pub tree: TreeRef,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sync {
    pub my_snapshot_sn: Sn,
    pub neighbor_snapshot_sn: Sn,
    pub neighbor_boot_time: BootTime,
    pub master: bool,
    pub more: bool,
    pub sync_sn: u16,
    /// Encoded iff `more` is clear.
    pub hello_hold_time: Option<u16>,
    pub trees: Vec<SyncTree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Upstream {
    pub sn: Sn,
    pub tree: TreeRef,
    pub metric: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeMsg {
    pub sn: Sn,
    pub tree: TreeRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub neighbor_sn: Sn,
    pub tree: TreeRef,
    pub neighbor_boot_time: BootTime,
    pub neighbor_snapshot_sn: Sn,
    pub my_snapshot_sn: Sn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Hello(Hello),
    Sync(Sync),
    IamUpstream(Upstream),
    IamNoLongerUpstream(TreeMsg),
    Interest(TreeMsg),
    NoInterest(TreeMsg),
    Ack(Ack),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub boot_time: BootTime,
    pub body: Body,
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self.body {
            Body::Hello(_) => MsgType::Hello,
            Body::Sync(_) => MsgType::Sync,
            Body::IamUpstream(_) => MsgType::IamUpstream,
            Body::IamNoLongerUpstream(_) => MsgType::IamNoLongerUpstream,
            Body::Interest(_) => MsgType::Interest,
            Body::NoInterest(_) => MsgType::NoInterest,
            Body::Ack(_) => MsgType::Ack,
        }
    }

    /// Tree and SN of reliably transmitted messages.
    pub fn tree_sn(&self) -> Option<(TreeRef, Sn)> {
        match &self.body {
            Body::IamUpstream(u) => Some((u.tree, u.sn)),
            Body::IamNoLongerUpstream(m) | Body::Interest(m) | Body::NoInterest(m) => Some((m.tree, m.sn)),
            _ => None,
        }
    }

    pub fn tree(&self) -> Option<TreeRef> {
        match &self.body {
            Body::Ack(a) => Some(a.tree),
            _ => self.tree_sn().map(|(t, _)| t),
        }
    }
}

type HmacSha256 = Hmac<Sha256>;

fn mac_over(key: &[u8], src: Ipv4Addr, dst: Ipv4Addr, zeroed: &[u8]) -> [u8; MAC_LEN] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(&src.octets());
    mac.update(&dst.octets());
    mac.update(zeroed);
    mac.finalize().into_bytes().into()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn ip(&mut self, v: Ipv4Addr) {
        self.0.extend_from_slice(&v.octets());
    }
    fn tree(&mut self, t: TreeRef) {
        self.ip(t.source);
        self.ip(t.group);
    }
    fn metric(&mut self, m: Metric) {
        self.u32(m.pref);
        self.u32(m.rpc);
    }
}

/// Serialises `msg`. With a key, the security block carries an HMAC-SHA256
/// bound to `src` and `dst`.
pub fn encode(msg: &Message, src: Ipv4Addr, dst: Ipv4Addr, key: Option<&[u8]>) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64));
    w.u64(msg.boot_time);
    w.u8(PROTOCOL_VERSION);
    w.u8(msg.msg_type() as u8);
    match key {
        Some(_) => {
            w.u16(SEC_HMAC_SHA256);
            w.u16(MAC_LEN as u16);
            w.0.extend_from_slice(&[0u8; MAC_LEN]);
        }
        None => {
            w.u16(SEC_NONE);
            w.u16(0);
        }
    }
    match &msg.body {
        Body::Hello(h) => {
            w.u16(TLV_HOLD_TIME);
            w.u16(2);
            w.u16(h.hold_time);
            if let Some(cp) = h.checkpoint_sn {
                w.u16(TLV_CHECKPOINT_SN);
                w.u16(4);
                w.u32(cp);
            }
            for t in &h.unknown {
                w.u16(t.kind);
                w.u16(t.value.len() as u16);
                w.0.extend_from_slice(&t.value);
            }
        }
        Body::Sync(s) => {
            w.u32(s.my_snapshot_sn);
            w.u32(s.neighbor_snapshot_sn);
            w.u64(s.neighbor_boot_time);
            let mut flags = 0;
            if s.master {
                flags |= FLAG_MASTER;
            }
            if s.more {
                flags |= FLAG_MORE;
            }
            w.u8(flags);
            w.u16(s.sync_sn);
            if !s.more {
                w.u16(s.hello_hold_time.unwrap_or(0));
            }
            for t in &s.trees {
                w.tree(t.tree);
                w.metric(t.metric);
            }
        }
        Body::IamUpstream(u) => {
            w.u32(u.sn);
            w.tree(u.tree);
            w.metric(u.metric);
        }
        Body::IamNoLongerUpstream(m) | Body::Interest(m) | Body::NoInterest(m) => {
            w.u32(m.sn);
            w.tree(m.tree);
        }
        Body::Ack(a) => {
            w.u32(a.neighbor_sn);
            w.tree(a.tree);
            w.u64(a.neighbor_boot_time);
            w.u32(a.neighbor_snapshot_sn);
            w.u32(a.my_snapshot_sn);
        }
    }
    let mut bytes = w.0;
    if let Some(k) = key {
        let tag = mac_over(k, src, dst, &bytes);
        bytes[HEADER_LEN..HEADER_LEN + MAC_LEN].copy_from_slice(&tag);
    }
    bytes
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn ip(&mut self) -> Result<Ipv4Addr, WireError> {
        let b = self.take(4)?;
        Ok(Ipv4Addr::new(b[0], b[1], b[2], b[3]))
    }
    fn tree(&mut self) -> Result<TreeRef, WireError> {
        Ok(TreeRef::new(self.ip()?, self.ip()?))
    }
    fn metric(&mut self) -> Result<Metric, WireError> {
        Ok(Metric::new(self.u32()?, self.u32()?))
    }
    fn finish(&self) -> Result<(), WireError> {
        if self.remaining() != 0 {
            return Err(WireError::InvalidMessage("trailing bytes"));
        }
        Ok(())
    }
}

/// Parses and authenticates a message. Unknown Hello TLVs are dropped.
pub fn decode(bytes: &[u8], src: Ipv4Addr, dst: Ipv4Addr, key: Option<&[u8]>) -> Result<Message, WireError> {
    decode_inner(bytes, src, dst, key, false)
}

/// Like [`decode`] but keeps unknown Hello TLVs so they survive re-encoding.
pub fn decode_lenient(bytes: &[u8], src: Ipv4Addr, dst: Ipv4Addr, key: Option<&[u8]>) -> Result<Message, WireError> {
    decode_inner(bytes, src, dst, key, true)
}

fn decode_inner(
    bytes: &[u8],
    src: Ipv4Addr,
    dst: Ipv4Addr,
    key: Option<&[u8]>,
    lenient: bool,
) -> Result<Message, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let boot_time = r.u64()?;
    let version = r.u8()?;
    let kind = r.u8()?;
    let sec_type = r.u16()?;
    let sec_len = r.u16()? as usize;
    if version != PROTOCOL_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let kind = MsgType::from_u8(kind).ok_or(WireError::UnknownType(kind))?;
    let sec_value = r.take(sec_len)?;
    match (key, sec_type) {
        (None, SEC_NONE) if sec_len == 0 => {}
        (Some(k), SEC_HMAC_SHA256) if sec_len == MAC_LEN => {
            let mut zeroed = bytes.to_vec();
            zeroed[HEADER_LEN..HEADER_LEN + MAC_LEN].fill(0);
            let expected = mac_over(k, src, dst, &zeroed);
            // Length is fixed, so a byte-wise fold keeps the comparison flat.
            let diff = expected.iter().zip(sec_value).fold(0u8, |acc, (a, b)| acc | (a ^ b));
            if diff != 0 {
                return Err(WireError::AuthFail);
            }
        }
        _ => return Err(WireError::AuthFail),
    }

    let body = match kind {
        MsgType::Hello => {
            let mut hold = None;
            let mut checkpoint = None;
            let mut unknown = Vec::new();
            while r.remaining() > 0 {
                if r.remaining() < 4 {
                    return Err(WireError::MalformedTlv);
                }
                let t = r.u16()?;
                let len = r.u16()? as usize;
                let value = r.take(len).map_err(|_| WireError::MalformedTlv)?;
                match t {
                    TLV_HOLD_TIME => {
                        let v: [u8; 2] = value.try_into().map_err(|_| WireError::MalformedTlv)?;
                        hold = Some(u16::from_be_bytes(v));
                    }
                    TLV_CHECKPOINT_SN => {
                        let v: [u8; 4] = value.try_into().map_err(|_| WireError::MalformedTlv)?;
                        checkpoint = Some(u32::from_be_bytes(v));
                    }
                    _ if lenient => unknown.push(RawTlv { kind: t, value: value.to_vec() }),
                    _ => {}
                }
            }
            let hold_time = hold.ok_or(WireError::InvalidMessage("hello without hold time"))?;
            Body::Hello(Hello { hold_time, checkpoint_sn: checkpoint, unknown })
        }
        MsgType::Sync => {
            if r.remaining() < SYNC_FIXED_LEN {
                return Err(WireError::Truncated);
            }
            let my_snapshot_sn = r.u32()?;
            let neighbor_snapshot_sn = r.u32()?;
            let neighbor_boot_time = r.u64()?;
            let flags = r.u8()?;
            if flags & !(FLAG_MASTER | FLAG_MORE) != 0 {
                return Err(WireError::InvalidMessage("reserved sync flags set"));
            }
            let sync_sn = r.u16()?;
            let more = flags & FLAG_MORE != 0;
            let hello_hold_time = if more { None } else { Some(r.u16()?) };
            if !r.remaining().is_multiple_of(SYNC_RECORD_LEN) {
                return Err(WireError::Truncated);
            }
            let mut trees = Vec::with_capacity(r.remaining() / SYNC_RECORD_LEN);
            while r.remaining() > 0 {
                trees.push(SyncTree { tree: r.tree()?, metric: r.metric()? });
            }
            Body::Sync(Sync {
                my_snapshot_sn,
                neighbor_snapshot_sn,
                neighbor_boot_time,
                master: flags & FLAG_MASTER != 0,
                more,
                sync_sn,
                hello_hold_time,
                trees,
            })
        }
        MsgType::IamUpstream => {
            let u = Upstream { sn: r.u32()?, tree: r.tree()?, metric: r.metric()? };
            r.finish()?;
            Body::IamUpstream(u)
        }
        MsgType::IamNoLongerUpstream | MsgType::Interest | MsgType::NoInterest => {
            let m = TreeMsg { sn: r.u32()?, tree: r.tree()? };
            r.finish()?;
            match kind {
                MsgType::IamNoLongerUpstream => Body::IamNoLongerUpstream(m),
                MsgType::Interest => Body::Interest(m),
                _ => Body::NoInterest(m),
            }
        }
        MsgType::Ack => {
            let a = Ack {
                neighbor_sn: r.u32()?,
                tree: r.tree()?,
                neighbor_boot_time: r.u64()?,
                neighbor_snapshot_sn: r.u32()?,
                my_snapshot_sn: r.u32()?,
            };
            r.finish()?;
            Body::Ack(a)
        }
    };
    Ok(Message { boot_time, body })
}

/// Reads the message type without validating anything else.
pub fn peek_type(bytes: &[u8]) -> Option<MsgType> {
    bytes.get(9).copied().and_then(MsgType::from_u8)
}
