// SPDX-License-Identifier: Apache-2.0

//! Schedule exploration.
//!
//! The network first settles once with the scenario's parameters but none of
//! its events. Every schedule then forks that state, redraws per-link delays
//! and the instants of ranged events from its own seed, replays the events,
//! waits for the network to settle and evaluates the chosen property. The
//! scenario's assertions are not scheduled; they are evaluated on every
//! settled end state instead.
//!
//! Schedules are counted as distinct interleavings by the order in which
//! control frames reached routers.

use crate::scenario::{Scenario, ScenarioEvent};
use crate::sim::{SimError, SimOptions, Simulator};
use hpim_core::{Time, TreeRef, TreeState, MICROS, MILLIS, SECOND};
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    /// Scenario assertions plus the global invariant suite.
    All,
    Asserts,
    Invariants,
    /// Every live router ACTIVE for every tree, plus the invariants.
    AllActiveExceptFailed,
    /// Every live router INACTIVE for every tree, plus the invariants.
    AllInactive,
}

impl Property {
    pub const NAMES: [&'static str; 5] = ["all", "asserts", "invariants", "all-active-except-failed", "all-inactive"];

    pub fn parse(s: &str) -> Option<Property> {
        Some(match s {
            "all" => Property::All,
            "asserts" => Property::Asserts,
            "invariants" => Property::Invariants,
            "all-active-except-failed" => Property::AllActiveExceptFailed,
            "all-inactive" => Property::AllInactive,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExploreConfig {
    /// Stop once this many distinct interleavings have been seen.
    pub interleavings: usize,
    /// Stop after this many schedules even if the bound is not reached.
    pub max_schedules: usize,
    pub seed: u64,
    pub property: Property,
    /// Per-link delays are drawn from `10us..=max_delay`.
    pub max_delay: Time,
    pub loss: f64,
    pub reorder: bool,
    pub warmup: Time,
    /// How long after its last event a schedule may take to settle.
    pub settle_limit: Time,
    /// Stop early once this much wall time has passed.
    pub budget: Option<Duration>,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            interleavings: 10_000,
            max_schedules: 100_000,
            seed: 1,
            property: Property::All,
            max_delay: 20 * MILLIS,
            loss: 0.0,
            reorder: false,
            warmup: 120 * SECOND,
            settle_limit: 120 * SECOND,
            budget: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Counterexample {
    pub schedule: usize,
    pub seed: u64,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExploreReport {
    pub name: String,
    pub schedules: usize,
    pub interleavings: usize,
    pub failures: Vec<Counterexample>,
    /// At least `interleavings` distinct interleavings were explored, or the
    /// scenario has no actions and so only one.
    pub bound_reached: bool,
    /// The wall-time budget ran out first; the verdict covers `schedules` only.
    pub budget_exhausted: bool,
    pub elapsed: Duration,
}

impl ExploreReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// A schedule: the settled base state plus seed-dependent choices.
pub struct Explorer {
    base: Simulator,
    actions: Vec<ScenarioEvent>,
    asserts: Vec<ScenarioEvent>,
    last: Time,
    cfg: ExploreConfig,
    name: String,
}

impl Explorer {
    pub fn new(sc: &Scenario, opts: &SimOptions, cfg: ExploreConfig) -> Result<Self, SimError> {
        let base_sc = Scenario { events: Vec::new(), ..sc.clone() };
        let mut base = Simulator::from_scenario(&base_sc, &SimOptions { trace: false, ..opts.clone() })?;
        base.validate_events(&sc.events)?;
        if !base.run_until_settled(cfg.warmup) {
            return Err(SimError::Invalid { line: 0, msg: "network does not settle during warm-up".into() });
        }
        let (asserts, actions): (Vec<_>, Vec<_>) = sc.events.iter().cloned().partition(|e| e.action.is_assertion());
        let last = actions.iter().map(|e| e.until.unwrap_or(e.at)).max().unwrap_or(0);
        Ok(Self { base, actions, asserts, last, cfg, name: sc.name.clone() })
    }

    pub fn schedule_seed(&self, k: usize) -> u64 {
        // SplitMix64 step: well spread seeds from consecutive indices.
        let mut z = self.cfg.seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Runs schedule `k`; `trace` keeps the full trace for a counterexample.
    pub fn run_schedule(&self, k: usize, trace: bool) -> (Simulator, Vec<String>) {
        let mut sim = self.base.clone();
        sim.set_tracing(trace);
        sim.reseed(self.schedule_seed(k));
        let max_delay = self.cfg.max_delay.max(10 * MICROS);
        for l in 0..sim.links.len() {
            let delay = sim.rng().gen_range(10 * MICROS..=max_delay);
            let m = &mut sim.links[l];
            m.delay = delay;
            m.loss = self.cfg.loss;
            m.reorder = self.cfg.reorder;
            m.jitter = if self.cfg.reorder { max_delay } else { 0 };
        }
        let start = sim.now();
        sim.schedule(&self.actions, start);
        sim.run_until(start + self.last);
        let mut problems = Vec::new();
        if !sim.run_until_settled(start + self.last + self.cfg.settle_limit) {
            problems.push("network did not settle".to_string());
        }
        let p = self.cfg.property;
        if matches!(p, Property::All | Property::Asserts) {
            for e in &self.asserts {
                if let Err(d) = sim.apply(&e.action) {
                    problems.push(format!("line {} `{}`: {d}", e.line, e.text));
                }
            }
        }
        if matches!(p, Property::AllActiveExceptFailed | Property::AllInactive) {
            let want = if p == Property::AllInactive { TreeState::Inactive } else { TreeState::Active };
            for s in &sim.topo.sources {
                for g in &s.groups {
                    let tree = TreeRef::new(s.ip, *g);
                    for (r, router) in sim.routers.iter().enumerate() {
                        let Some(router) = router else { continue };
                        let st = router.view(tree).state;
                        if st != want {
                            problems.push(format!("{} is {st} for {tree}", sim.topo.routers[r].name));
                        }
                    }
                }
            }
        }
        if p != Property::Asserts {
            let v = crate::check::quiescent(&sim);
            problems.extend(v.iter().map(|v| v.to_string()));
        }
        (sim, problems)
    }

    pub fn run(&self) -> ExploreReport {
        let started = Instant::now();
        let chunk = rayon::current_num_threads().max(1) * 16;
        let mut fingerprints = BTreeSet::new();
        let mut failures = Vec::new();
        let mut done = 0;
        let mut budget_exhausted = false;
        // Without actions every schedule replays the settled base state.
        let max_schedules = if self.actions.is_empty() { 1 } else { self.cfg.max_schedules };
        while done < max_schedules && fingerprints.len() < self.cfg.interleavings {
            if self.cfg.budget.is_some_and(|b| started.elapsed() > b) {
                budget_exhausted = true;
                break;
            }
            let end = (done + chunk).min(max_schedules);
            let results: Vec<(usize, u64, Vec<String>)> = (done..end)
                .into_par_iter()
                .map(|k| {
                    let (sim, problems) = self.run_schedule(k, false);
                    (k, sim.fingerprint, problems)
                })
                .collect();
            for (k, fp, problems) in results {
                fingerprints.insert(fp);
                if !problems.is_empty() {
                    failures.push(Counterexample { schedule: k, seed: self.schedule_seed(k), problems });
                }
            }
            done = end;
        }
        ExploreReport {
            name: self.name.clone(),
            schedules: done,
            interleavings: fingerprints.len(),
            failures,
            bound_reached: fingerprints.len() >= self.cfg.interleavings || self.actions.is_empty(),
            budget_exhausted,
            elapsed: started.elapsed(),
        }
    }
}
