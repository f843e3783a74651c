// SPDX-License-Identifier: Apache-2.0

//! Random topologies and event scripts, and the sweep that checks the
//! invariant suite after every event.
//!
//! Cases are produced as topology and scenario text so a failing case can be
//! written out and rerun with the ordinary tools.

use crate::scenario::Scenario;
use crate::sim::{SimError, SimOptions, Simulator};
use crate::topology::Topology;
use hpim_core::{Time, SECOND};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::fmt::Write;

pub struct RandomCase {
    pub seed: u64,
    pub topology_text: String,
    pub scenario_text: String,
    pub topology: Topology,
    pub scenario: Scenario,
}

const GROUPS: [&str; 2] = ["232.1.1.1", "232.1.1.2"];

/// Spacing of events in the written-out scenario.
const STEP: u64 = 60;

pub fn random_case(seed: u64, max_routers: usize) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_routers.max(2));
    // links[l] = attached routers; link 0 carries the source.
    let mut links: Vec<Vec<usize>> = Vec::new();
    let mut src_routers: Vec<usize> = (0..n).collect();
    src_routers.shuffle(&mut rng);
    src_routers.truncate(rng.gen_range(1..=2.min(n)));
    links.push(src_routers.clone());
    let mut pairs = BTreeSet::new();
    for r in 1..n {
        let peer = rng.gen_range(0..r);
        if rng.gen_bool(0.3) && r + 1 < n && n > 2 {
            let third = rng.gen_range(0..r);
            let mut set: Vec<usize> = BTreeSet::from([peer, third, r]).into_iter().collect();
            set.sort_unstable();
            links.push(set);
        } else {
            pairs.insert((peer, r));
            links.push(vec![peer, r]);
        }
    }
    for _ in 0..rng.gen_range(0..=n / 2) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && pairs.insert((a.min(b), a.max(b))) {
            links.push(vec![a.min(b), a.max(b)]);
        }
    }

    let mut topo = String::new();
    let _ = writeln!(topo, "# random case {seed}");
    let _ = writeln!(topo, "param hello_period 1s\nparam hold_time 3s");
    if rng.gen_bool(0.5) {
        let _ = writeln!(topo, "param initial_interest di");
    }
    for (l, attached) in links.iter().enumerate() {
        let kind = if attached.len() == 2 && l != 0 { "p2p" } else { "shared" };
        let delay = rng.gen_range(1..=20);
        let _ = writeln!(topo, "link l{l} {kind} delay {delay}ms");
    }
    let mut ifaces: Vec<Vec<String>> = vec![Vec::new(); n];
    for (r, mine) in ifaces.iter_mut().enumerate() {
        let _ = writeln!(topo, "router R{r}");
        for (l, attached) in links.iter().enumerate() {
            if attached.contains(&r) {
                let i = mine.len();
                let cost = rng.gen_range(1..=20);
                let _ = writeln!(topo, "iface R{r} i{i} 10.{}.{}.{} l{l} cost {cost}", l / 250, l % 250, r + 1);
                mine.push(format!("i{i}"));
            }
        }
    }
    let groups = &GROUPS[..rng.gen_range(1..=2)];
    let group_list: String = groups.iter().map(|g| format!(" group {g}")).collect();
    let _ = writeln!(topo, "source S 10.0.0.200 l0{group_list}");
    let receivers = rng.gen_range(1..=3);
    for h in 0..receivers {
        let l = rng.gen_range(0..links.len());
        let _ = writeln!(topo, "receiver H{h} l{l}");
    }

    let mut lines = vec!["start_source S".to_string()];
    for h in 0..receivers {
        lines.push(format!("host_join H{h} {}", groups.choose(&mut rng).expect("non-empty")));
    }
    let mut down_routers = BTreeSet::new();
    let mut down_links = BTreeSet::new();
    let mut down_ifaces = BTreeSet::new();
    let mut source_on = true;
    for _ in 0..rng.gen_range(4..=8) {
        let r = rng.gen_range(0..n);
        let i = rng.gen_range(0..ifaces[r].len());
        let line = match rng.gen_range(0..9) {
            0 if down_routers.contains(&r) => {
                down_routers.remove(&r);
                format!("recover_router R{r}")
            }
            0 => {
                down_routers.insert(r);
                format!("fail_router R{r}")
            }
            1 => {
                let l = rng.gen_range(0..links.len());
                if down_links.remove(&l) {
                    format!("recover_link l{l}")
                } else {
                    down_links.insert(l);
                    format!("fail_link l{l}")
                }
            }
            2 => {
                if down_ifaces.remove(&(r, i)) {
                    format!("recover_interface R{r} {}", ifaces[r][i])
                } else {
                    down_ifaces.insert((r, i));
                    format!("fail_interface R{r} {}", ifaces[r][i])
                }
            }
            3 | 4 => format!("set_cost R{r} {} {}", ifaces[r][i], rng.gen_range(1..=30)),
            5 => format!("host_join H{} {}", rng.gen_range(0..receivers), groups.choose(&mut rng).expect("non-empty")),
            6 => format!("host_leave H{} {}", rng.gen_range(0..receivers), groups.choose(&mut rng).expect("non-empty")),
            7 => {
                source_on = !source_on;
                if source_on {
                    "start_source S".into()
                } else {
                    "stop_source S".into()
                }
            }
            _ => format!("reboot_interface R{r} {}", ifaces[r][i]),
        };
        lines.push(line);
    }
    let mut scn = String::from("topology case.topo\n");
    for (k, l) in lines.iter().enumerate() {
        let t = k as u64 * STEP;
        let _ = writeln!(scn, "at {t}s {l}\nat {}s check", t + STEP - 1);
    }
    let topology = Topology::parse(&topo).expect("generated topology parses");
    let scenario = Scenario::parse(&scn).expect("generated scenario parses");
    RandomCase { seed, topology_text: topo, scenario_text: scn, topology, scenario }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub cases: usize,
    pub seed: u64,
    pub max_routers: usize,
    /// Time each event gets to settle before checking.
    pub settle_limit: Time,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { cases: 200, seed: 1, max_routers: 8, settle_limit: 300 * SECOND }
    }
}

#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub case: usize,
    pub seed: u64,
    pub step: usize,
    pub action: String,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub cases: usize,
    pub checkpoints: usize,
    pub failures: Vec<SweepFailure>,
}

/// Step index, the action just applied, and the problems found after it.
pub type CaseFailure = (usize, String, Vec<String>);

/// Runs one case event by event, checking after each settles. Returns the
/// number of checkpoints passed and the first failure.
pub fn run_case(case: &RandomCase, settle_limit: Time) -> Result<(usize, Option<CaseFailure>), SimError> {
    let opts = SimOptions { seed: case.seed, ..SimOptions::default() };
    let mut sim = Simulator::new(case.topology.clone(), &opts)?;
    let actions: Vec<_> = case.scenario.events.iter().filter(|e| !e.action.is_assertion()).collect();
    let mut checkpoints = 0;
    for (step, e) in actions.iter().enumerate() {
        if let Err(d) = sim.apply(&e.action) {
            return Ok((checkpoints, Some((step, e.text.clone(), vec![d]))));
        }
        // Originators that lost their route only recover on the next data
        // packet, so a checkpoint waits out one data interval first.
        let limit = sim.now() + settle_limit;
        sim.run_until(sim.now() + sim.topo.params.data_interval);
        let mut problems = Vec::new();
        if !sim.run_until_settled(limit) {
            problems.push("network did not settle".to_string());
        }
        problems.extend(crate::check::quiescent(&sim).iter().map(|v| v.to_string()));
        if !problems.is_empty() {
            return Ok((checkpoints, Some((step, e.text.clone(), problems))));
        }
        checkpoints += 1;
    }
    Ok((checkpoints, None))
}

pub fn case_seed(base: u64, k: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(k as u64)
}

pub fn sweep(cfg: &SweepConfig) -> Result<SweepReport, SimError> {
    let mut report = SweepReport::default();
    for k in 0..cfg.cases {
        let seed = case_seed(cfg.seed, k);
        let case = random_case(seed, cfg.max_routers);
        let (passed, failure) = run_case(&case, cfg.settle_limit)?;
        report.cases += 1;
        report.checkpoints += passed;
        if let Some((step, action, problems)) = failure {
            report.failures.push(SweepFailure { case: k, seed, step, action, problems });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_reproducible() {
        let a = random_case(7, 8);
        let b = random_case(7, 8);
        assert_eq!(a.topology_text, b.topology_text);
        assert_eq!(a.scenario_text, b.scenario_text);
        assert!(a.topology.routers.len() <= 8);
    }
}
