// SPDX-License-Identifier: Apache-2.0

//! Determinism, link models, replays and exploration edge cases.

mod support;

use hpim_core::wire::MsgType;
use hpim_core::{DigestMode, SECOND};
use hpim_netsim::explore::{ExploreConfig, Explorer, Property};
use hpim_netsim::link::LinkOverride;
use hpim_netsim::scenario::Scenario;
use hpim_netsim::sim::{SimOptions, Simulator};
use hpim_netsim::suite::{run_file, scenario_files};
use hpim_netsim::trace::{write_jsonl, TraceRecord};
use support::{scenario_path, sim_with};

fn lossy(seed: u64, loss: f64) -> SimOptions {
    SimOptions {
        seed,
        links: LinkOverride { loss: Some(loss), jitter: Some(2_000), reorder: Some(true), ..LinkOverride::default() },
        ..SimOptions::default()
    }
}

fn jsonl(trace: &[TraceRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_jsonl(trace, &mut out).unwrap();
    out
}

#[test]
fn same_inputs_give_byte_identical_traces() {
    let path = scenario_path("paper/examples/fig17_formation.scn");
    let opts = SimOptions { trace: true, ..lossy(9, 0.1) };
    let (a, sa) = run_file(&path, &opts).unwrap();
    let (b, sb) = run_file(&path, &opts).unwrap();
    assert!(!sa.trace.is_empty());
    assert_eq!(jsonl(&sa.trace), jsonl(&sb.trace));
    assert_eq!(a.stats, b.stats);
    let (_, sc) = run_file(&path, &SimOptions { trace: true, ..lossy(10, 0.1) }).unwrap();
    assert_ne!(jsonl(&sa.trace), jsonl(&sc.trace));
}

const CHURN: &str = "at 1s start_source S\nat 5s host_join H 232.1.1.1\nat 20s host_leave H 232.1.1.1\n\
    at 35s host_join H 232.1.1.1\nat 50s reboot_interface R2 eth0\n";

fn churn(opts: &SimOptions) -> Simulator {
    let mut sim = sim_with("paper/topologies/pair.topo", CHURN, opts);
    sim.run_until(60 * SECOND);
    assert!(sim.run_until_settled(600 * SECOND), "seed {} did not settle", opts.seed);
    sim
}

#[test]
fn hundred_seeds_replay_exactly_and_converge_alike() {
    let reference = churn(&SimOptions::default()).digests(DigestMode::Protocol);
    let mut fingerprints = std::collections::BTreeSet::new();
    for seed in 0..100 {
        let opts = lossy(seed, 0.2);
        let a = churn(&opts);
        let b = churn(&opts);
        assert_eq!((a.fingerprint, &a.stats), (b.fingerprint, &b.stats), "seed {seed}");
        assert_eq!(a.digests(DigestMode::Full), b.digests(DigestMode::Full), "seed {seed}");
        assert_eq!(a.digests(DigestMode::Protocol), reference, "seed {seed}");
        assert!(a.evaluate().is_empty(), "seed {seed}: {:?}", a.evaluate());
        fingerprints.insert(a.fingerprint);
    }
    assert!(fingerprints.len() > 50, "only {} distinct runs", fingerprints.len());
}

#[test]
fn heavy_loss_is_repaired_by_retransmission() {
    let opts = lossy(3, 0.5);
    let sim = churn(&opts);
    let s = &sim.stats;
    let lost = s.dropped as f64 / (s.dropped + s.delivered) as f64;
    // Roughly half of the control frames vanish; data is never lost.
    assert!((0.35..0.6).contains(&lost), "loss ratio {lost}");
    assert!(s.retransmitted > 0);
    assert_eq!(sim.digests(DigestMode::Protocol), churn(&SimOptions::default()).digests(DigestMode::Protocol));
}

fn rejected_as_stale(trace: &[TraceRecord]) -> usize {
    trace
        .iter()
        .filter(|r| match r {
            TraceRecord::State { change, .. } => {
                change["event"] == "rejected" && change["reason"].as_str().is_some_and(|x| x.contains("stale"))
            }
            _ => false,
        })
        .count()
}

#[test]
fn fifo_links_never_deliver_stale_messages() {
    let mut files = scenario_files(&scenario_path("paper/tests")).unwrap();
    files.extend(scenario_files(&scenario_path("paper/examples")).unwrap());
    assert!(files.len() >= 20);
    for f in files {
        let (_, sim) = run_file(&f, &SimOptions { trace: true, ..SimOptions::default() }).unwrap();
        assert_eq!(rejected_as_stale(&sim.trace), 0, "{}", f.display());
    }
    // A replayed old message is the one way to get there.
    let opts = SimOptions { trace: true, ..SimOptions::default() };
    let (_, sim) = run_file(&scenario_path("paper/replay/r03_iam_upstream.scn"), &opts).unwrap();
    assert!(rejected_as_stale(&sim.trace) > 0);
}

#[test]
fn lossless_formation_needs_no_retransmission() {
    for name in ["tests/t04_tree_formation.scn", "tests/t07_aw_election.scn", "examples/fig17_formation.scn"] {
        let (report, _) = run_file(&scenario_path(&format!("paper/{name}")), &SimOptions::default()).unwrap();
        assert!(report.passed(), "{name}");
        assert_eq!(report.stats.retransmitted, 0, "{name}");
        assert_eq!(report.stats.dropped, 0, "{name}");
    }
}

#[test]
fn replayed_freshest_upstream_is_acked_again_without_state_change() {
    let script = "at 1s start_source S\n\
        at 5s capture_frame up IamUpstream from R1 iface eth1 last\n\
        at 5s capture_digest before full\n\
        at 6s replay_frame up\n\
        at 7s assert_digest before\n";
    let opts = SimOptions { log_frames: true, ..SimOptions::default() };
    let mut sim = sim_with("paper/topologies/pair.topo", script, &opts);
    let report = sim.run(8 * SECOND);
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    let r2 = sim.topo.router_index("R2").unwrap();
    let acks = sim.frames.iter().filter(|f| f.router == r2 && f.msg_type == MsgType::Ack && f.t >= 6 * SECOND).count();
    assert_eq!(acks, 1);
}

#[test]
fn replayed_sync_of_a_finished_period_changes_nothing() {
    let script = "at 1s start_source S\n\
        at 40s capture_frame old Sync from R1 iface eth1\n\
        at 40s capture_digest before full\n\
        at 41s replay_frame old\n\
        at 42s assert_digest before\n\
        at 42s check\n";
    let mut sim =
        sim_with("paper/topologies/pair.topo", script, &SimOptions { log_frames: true, ..SimOptions::default() });
    let report = sim.run(43 * SECOND);
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
}

fn scenario(topology: &str, body: &str) -> Scenario {
    let path = scenario_path(&format!("paper/topologies/{topology}"));
    Scenario::parse(&format!("topology {}\n{body}", path.display())).unwrap()
}

#[test]
fn action_free_scenario_is_a_single_vacuous_schedule() {
    let sc = scenario("fig17.topo", "");
    let ex = Explorer::new(&sc, &SimOptions::default(), ExploreConfig::default()).unwrap();
    let report = ex.run();
    assert_eq!((report.schedules, report.interleavings), (1, 1));
    assert!(report.passed() && report.bound_reached);
}

#[test]
fn explorer_finds_the_loop_without_feasibility() {
    let sc = scenario("fig18.topo", "set feasibility off\nat 1s start_source S\nat 100s stop_source S\n");
    let cfg = ExploreConfig {
        interleavings: 5,
        max_schedules: 20,
        property: Property::AllInactive,
        settle_limit: 600 * SECOND,
        ..ExploreConfig::default()
    };
    let report = Explorer::new(&sc, &SimOptions::default(), cfg).unwrap().run();
    assert!(!report.passed());
    let first = &report.failures[0];
    assert!(first.problems.iter().any(|p| p.contains("ACTIVE")), "{:?}", first.problems);
}

#[test]
fn explorer_counterexample_is_reproducible() {
    let sc = scenario("fig18.topo", "set feasibility off\nat 1s start_source S\nat 100s stop_source S\n");
    let cfg = ExploreConfig { property: Property::AllInactive, settle_limit: 600 * SECOND, ..ExploreConfig::default() };
    let ex = Explorer::new(&sc, &SimOptions::default(), cfg).unwrap();
    let (a, pa) = ex.run_schedule(3, true);
    let (b, pb) = ex.run_schedule(3, true);
    assert_eq!(pa, pb);
    assert_eq!(jsonl(&a.trace), jsonl(&b.trace));
}
