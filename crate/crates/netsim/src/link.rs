// SPDX-License-Identifier: Apache-2.0

use hpim_core::{Time, MILLIS};
use rand::Rng;

/// Per-link delivery behaviour. Without `reorder`, frames between one pair
/// of interfaces arrive in the order they were sent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub delay: Time,
    /// Extra delay drawn uniformly from `0..=jitter`.
    pub jitter: Time,
    pub loss: f64,
    pub duplicate: f64,
    pub reorder: bool,
    pub up: bool,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self { delay: MILLIS, jitter: 0, loss: 0.0, duplicate: 0.0, reorder: false, up: true }
    }
}

impl LinkModel {
    pub fn sample_delay(&self, rng: &mut impl Rng) -> Time {
        // Reordering needs spread; fall back to four link delays of jitter.
        let jitter = if self.reorder && self.jitter == 0 { 4 * self.delay } else { self.jitter };
        self.delay + if jitter > 0 { rng.gen_range(0..=jitter) } else { 0 }
    }

    pub fn lost(&self, rng: &mut impl Rng) -> bool {
        self.loss > 0.0 && rng.gen_bool(self.loss)
    }

    pub fn duplicated(&self, rng: &mut impl Rng) -> bool {
        self.duplicate > 0.0 && rng.gen_bool(self.duplicate)
    }
}

/// Overrides applied to every link of a topology.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkOverride {
    pub delay: Option<Time>,
    pub jitter: Option<Time>,
    pub loss: Option<f64>,
    pub duplicate: Option<f64>,
    pub reorder: Option<bool>,
}

impl LinkOverride {
    pub fn apply(&self, m: &mut LinkModel) {
        if let Some(v) = self.delay {
            m.delay = v;
        }
        if let Some(v) = self.jitter {
            m.jitter = v;
        }
        if let Some(v) = self.loss {
            m.loss = v;
        }
        if let Some(v) = self.duplicate {
            m.duplicate = v;
        }
        if let Some(v) = self.reorder {
            m.reorder = v;
        }
    }
}
