// SPDX-License-Identifier: Apache-2.0

use hpim_core::{Time, MICROS, MILLIS, SECOND};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    /// 1-based; 0 for whole-file problems.
    pub line: usize,
    pub msg: String,
}

impl ParseError {
    pub fn at(line: usize, msg: impl Into<String>) -> Self {
        Self { line, msg: msg.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { line: 0, msg: format!("{}: {e}", path.display()) }
    }
}

/// Parses `30s`, `1.5s`, `250ms`, `10us`, `2m`; a bare number is seconds.
pub fn parse_time(s: &str) -> Result<Time, String> {
    let (num, unit) = match s.find(|c: char| c.is_ascii_alphabetic()) {
        Some(i) => s.split_at(i),
        None => (s, "s"),
    };
    let scale = match unit {
        "us" => MICROS,
        "ms" => MILLIS,
        "s" => SECOND,
        "m" | "min" => 60 * SECOND,
        _ => return Err(format!("bad time unit in {s}")),
    };
    let v: f64 = num.parse().map_err(|_| format!("bad time {s}"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("bad time {s}"));
    }
    Ok((v * scale as f64).round() as Time)
}

pub fn parse_prob(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad probability {s}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("probability out of range: {s}"))
    }
}
