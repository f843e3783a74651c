// SPDX-License-Identifier: Apache-2.0

//! `hpim-sim`: run, check, explore and sweep simulated networks.
//!
//! Exit status: 0 when everything held, 1 on a property violation or failed
//! assertion, 2 on usage or I/O errors. Reports go to standard error.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hpim_core::{fmt_time, DigestMode, Time};
use hpim_netsim::explore::{ExploreConfig, Explorer, Property};
use hpim_netsim::link::LinkOverride;
use hpim_netsim::parse::{parse_prob, parse_time};
use hpim_netsim::random::{random_case, run_case, SweepConfig};
use hpim_netsim::suite::{default_root, scenario_files, suite_dir, SUITES};
use hpim_netsim::trace::{read_jsonl, write_jsonl, TraceRecord};
use hpim_netsim::{RunReport, Scenario, SimOptions, Simulator};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "hpim-sim", version, about = "Hard-state multicast routing simulator")]
struct Cli {
    /// Print per-assertion results.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario.
    Run {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        sim: SimFlags,
        /// Write the JSON Lines trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run scenario files or a named suite and report failures.
    Check {
        /// Named suite (paper-tests, model-check, replay).
        #[arg(long)]
        suite: Option<String>,
        /// Directory holding the named suites.
        #[arg(long)]
        root: Option<PathBuf>,
        /// Scenario files or directories.
        paths: Vec<PathBuf>,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Check properties over many randomised schedules of one scenario.
    Explore {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        sim: SimFlags,
        /// Distinct interleavings to explore.
        #[arg(long, default_value_t = 10_000)]
        bound: usize,
        /// Give up on the bound after this many schedules; defaults to ten per interleaving.
        #[arg(long)]
        max_schedules: Option<usize>,
        /// all, asserts, invariants, all-active-except-failed or all-inactive.
        #[arg(long, default_value = "all")]
        property: String,
        /// Largest per-link delay drawn for a schedule.
        #[arg(long, default_value = "20ms", value_parser = parse_time)]
        max_delay: Time,
        /// Wall-clock budget in seconds.
        #[arg(long)]
        budget: Option<u64>,
        /// Write the trace of the first failing schedule here.
        #[arg(long)]
        counterexample: Option<PathBuf>,
    },
    /// Check the invariant suite on random topologies and event scripts.
    Sweep {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_routers: usize,
        /// Write failing cases as topology and scenario files here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the router digests recorded in a trace; with two traces,
    /// compare them.
    Digest { trace: PathBuf, other: Option<PathBuf> },
    /// Render a trace as a readable timeline.
    Render {
        trace: PathBuf,
        /// Include Hellos and data packets.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Args)]
struct Target {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the topology named by the scenario.
    #[arg(long)]
    topology: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SimFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Loss probability applied to every link.
    #[arg(long, value_parser = parse_prob)]
    loss: Option<f64>,
    /// Let frames overtake each other.
    #[arg(long)]
    reorder: bool,
    #[arg(long, value_parser = parse_prob)]
    duplicate: Option<f64>,
    #[arg(long, value_parser = parse_time)]
    delay: Option<Time>,
    #[arg(long)]
    fragment_size: Option<String>,
    #[arg(long)]
    max_sn: Option<String>,
    #[arg(long)]
    hello_period: Option<String>,
    #[arg(long)]
    hold_time: Option<String>,
    #[arg(long)]
    sat: Option<String>,
    #[arg(long)]
    retransmit_timeout: Option<String>,
    #[arg(long)]
    al_hysteresis: Option<String>,
    /// Retry failing assertions for up to this long while the network is
    /// still converging.
    #[arg(long, default_value = "0s", value_parser = parse_time)]
    grace: Time,
}

impl SimFlags {
    fn options(&self) -> SimOptions {
        let named = [
            ("fragment_size", &self.fragment_size),
            ("max_sn", &self.max_sn),
            ("hello_period", &self.hello_period),
            ("hold_time", &self.hold_time),
            ("sat", &self.sat),
            ("retransmit_timeout", &self.retransmit_timeout),
            ("al_hysteresis", &self.al_hysteresis),
        ];
        SimOptions {
            seed: self.seed,
            trace: false,
            log_frames: false,
            links: LinkOverride {
                delay: self.delay,
                jitter: None,
                loss: self.loss,
                duplicate: self.duplicate,
                reorder: self.reorder.then_some(true),
            },
            params: named.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect(),
            assert_grace: self.grace,
        }
    }
}

/// Failures that map to exit status 1 rather than 2.
#[derive(Debug)]
struct Violated(String);

impl std::fmt::Display for Violated {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violated {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Violated>() => {
            eprintln!("FAILED: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let verbose = cli.verbose;
    match cli.cmd {
        Cmd::Run { target, sim, trace } => cmd_run(&target, &sim, trace.as_deref(), verbose),
        Cmd::Check { suite, root, paths, sim } => cmd_check(suite, root, paths, &sim, verbose),
        Cmd::Explore { target, sim, bound, max_schedules, property, max_delay, budget, counterexample } => {
            let property = Property::parse(&property).ok_or_else(|| {
                anyhow!("unknown property {property}; expected one of {}", Property::NAMES.join(", "))
            })?;
            let cfg = ExploreConfig {
                interleavings: bound,
                max_schedules: max_schedules.unwrap_or(bound.saturating_mul(10)),
                seed: sim.seed,
                property,
                max_delay,
                loss: sim.loss.unwrap_or(0.0),
                reorder: sim.reorder,
                budget: budget.map(Duration::from_secs),
                ..ExploreConfig::default()
            };
            cmd_explore(&target, &sim, cfg, counterexample.as_deref())
        }
        Cmd::Sweep { cases, seed, max_routers, out } => cmd_sweep(cases, seed, max_routers, out.as_deref()),
        Cmd::Digest { trace, other } => cmd_digest(&trace, other.as_deref()),
        Cmd::Render { trace, all } => cmd_render(&trace, all),
    }
}

fn load_scenario(target: &Target) -> Result<Scenario> {
    let mut sc = Scenario::load(&target.scenario).with_context(|| format!("loading {}", target.scenario.display()))?;
    if let Some(t) = &target.topology {
        sc.topology = Some(t.clone());
    }
    Ok(sc)
}

fn end_of(sc: &Scenario) -> Time {
    sc.end.unwrap_or_else(|| sc.last_event())
}

fn print_report(name: &str, report: &RunReport, verbose: bool) {
    let failed = report.failures().count();
    eprintln!(
        "{name}: {} assertion(s), {failed} failed, {} violation(s), ended at {}",
        report.asserts.len(),
        report.violations.len(),
        fmt_time(report.end)
    );
    for a in &report.asserts {
        if verbose || !a.ok {
            let mark = if a.ok { "ok  " } else { "FAIL" };
            eprintln!("  {mark} line {} at {}: {} {}", a.line, fmt_time(a.t), a.text, a.detail);
        }
    }
    for (t, v) in &report.violations {
        eprintln!("  violation at {}: {v}", fmt_time(*t));
    }
}

fn cmd_run(target: &Target, flags: &SimFlags, trace: Option<&Path>, verbose: bool) -> Result<()> {
    let sc = load_scenario(target)?;
    let opts = SimOptions { trace: trace.is_some(), ..flags.options() };
    let mut sim = Simulator::from_scenario(&sc, &opts)?;
    let report = sim.run(end_of(&sc));
    if let Some(path) = trace {
        sim.trace_digests(DigestMode::Full);
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_jsonl(&sim.trace, BufWriter::new(f))?;
    }
    print_report(&sc.name, &report, verbose);
    if !report.passed() {
        bail!(Violated(format!("{} did not pass", sc.name)));
    }
    Ok(())
}

fn cmd_check(
    suite: Option<String>,
    root: Option<PathBuf>,
    paths: Vec<PathBuf>,
    flags: &SimFlags,
    verbose: bool,
) -> Result<()> {
    let mut files = Vec::new();
    if let Some(name) = &suite {
        let root = root.unwrap_or_else(default_root);
        let names: Vec<&str> = SUITES.iter().map(|(n, _)| *n).collect();
        let dir = suite_dir(&root, name)
            .ok_or_else(|| anyhow!("unknown suite {name}; expected one of {}", names.join(", ")))?;
        files.extend(scenario_files(&dir).with_context(|| format!("reading {}", dir.display()))?);
    }
    for p in paths {
        if p.is_dir() {
            files.extend(scenario_files(&p).with_context(|| format!("reading {}", p.display()))?);
        } else {
            files.push(p);
        }
    }
    if files.is_empty() {
        bail!("nothing to check: give --suite or scenario paths");
    }
    let opts = flags.options();
    let mut failed = Vec::new();
    for f in &files {
        let sc = Scenario::load(f).with_context(|| format!("loading {}", f.display()))?;
        let mut sim = Simulator::from_scenario(&sc, &opts).with_context(|| format!("starting {}", f.display()))?;
        let report = sim.run(end_of(&sc));
        print_report(&sc.name, &report, verbose);
        if !report.passed() {
            failed.push(sc.name);
        }
    }
    eprintln!("{} of {} scenario(s) passed", files.len() - failed.len(), files.len());
    if !failed.is_empty() {
        bail!(Violated(format!("failing: {}", failed.join(", "))));
    }
    Ok(())
}

fn cmd_explore(target: &Target, flags: &SimFlags, cfg: ExploreConfig, counterexample: Option<&Path>) -> Result<()> {
    let sc = load_scenario(target)?;
    let explorer = Explorer::new(&sc, &flags.options(), cfg)?;
    let report = explorer.run();
    eprintln!(
        "{}: {} schedule(s), {} distinct interleaving(s), {} failing, {:.1}s{}",
        report.name,
        report.schedules,
        report.interleavings,
        report.failures.len(),
        report.elapsed.as_secs_f64(),
        if report.budget_exhausted {
            " (budget exhausted, partial verdict)"
        } else if !report.bound_reached {
            " (bound not reached)"
        } else {
            ""
        }
    );
    if let Some(first) = report.failures.first() {
        eprintln!("first failing schedule {} (seed {}):", first.schedule, first.seed);
        for p in &first.problems {
            eprintln!("  {p}");
        }
        if let Some(path) = counterexample {
            let (sim, _) = explorer.run_schedule(first.schedule, true);
            let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_jsonl(&sim.trace, BufWriter::new(f))?;
            eprintln!("counterexample trace written to {}", path.display());
        }
        bail!(Violated(format!("{} schedule(s) violate the property", report.failures.len())));
    }
    Ok(())
}

fn cmd_sweep(cases: usize, seed: u64, max_routers: usize, out: Option<&Path>) -> Result<()> {
    let cfg = SweepConfig { cases, seed, max_routers, ..SweepConfig::default() };
    let mut failures = 0;
    let mut checkpoints = 0;
    for k in 0..cfg.cases {
        let case_seed = hpim_netsim::random::case_seed(cfg.seed, k);
        let case = random_case(case_seed, cfg.max_routers);
        let (passed, failure) = run_case(&case, cfg.settle_limit)?;
        checkpoints += passed;
        if let Some((step, action, problems)) = failure {
            failures += 1;
            eprintln!("case {k} (seed {case_seed}) step {step} `{action}`:");
            for p in &problems {
                eprintln!("  {p}");
            }
            if let Some(dir) = out {
                let dir = dir.join(format!("case{k}"));
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("case.topo"), &case.topology_text)?;
                std::fs::write(dir.join("case.scn"), &case.scenario_text)?;
            }
        }
    }
    eprintln!("{cases} case(s), {checkpoints} checkpoint(s), {failures} failing case(s)");
    if failures > 0 {
        bail!(Violated(format!("{failures} case(s) violate the invariant suite")));
    }
    Ok(())
}

fn load_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Last digest of each router in a trace.
fn final_digests(records: &[TraceRecord]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for r in records {
        if let TraceRecord::Digest { router, digest, .. } = r {
            out.insert(router.clone(), digest.clone());
        }
    }
    out
}

fn cmd_digest(trace: &Path, other: Option<&Path>) -> Result<()> {
    let a = final_digests(&load_trace(trace)?);
    if a.is_empty() {
        bail!("{} holds no digest records", trace.display());
    }
    let Some(other) = other else {
        for d in a.values() {
            print!("{d}");
        }
        return Ok(());
    };
    let b = final_digests(&load_trace(other)?);
    let mut differ = 0;
    for name in a.keys().chain(b.keys()).collect::<std::collections::BTreeSet<_>>() {
        match (a.get(name), b.get(name)) {
            (Some(x), Some(y)) if x == y => {}
            (x, y) => {
                differ += 1;
                eprintln!("router {name} differs");
                let (x, y) = (x.map_or("", String::as_str), y.map_or("", String::as_str));
                for (l, r) in x.lines().zip(y.lines()).filter(|(l, r)| l != r).take(5) {
                    eprintln!("  - {l}\n  + {r}");
                }
            }
        }
    }
    if differ > 0 {
        bail!(Violated(format!("{differ} router digest(s) differ")));
    }
    eprintln!("digests identical");
    Ok(())
}

fn cmd_render(trace: &Path, all: bool) -> Result<()> {
    let ts = |t: u64| format!("{:>12}", fmt_time(t));
    let mut out = std::io::stdout().lock();
    for r in load_trace(trace)? {
        let line = match r {
            TraceRecord::Send { t, frame, router, iface, msg_type, dst, retransmission, detail, .. } => {
                if !all && msg_type == "Hello" {
                    continue;
                }
                let re = if retransmission { " (retransmission)" } else { "" };
                format!("{} {router}/{iface} -> {dst} {msg_type}#{frame} {detail}{re}", ts(t))
            }
            TraceRecord::Recv { t, frame, router, iface, msg_type } => {
                if !all && msg_type == "Hello" {
                    continue;
                }
                format!("{}   {router}/{iface} <- {msg_type}#{frame}", ts(t))
            }
            TraceRecord::Drop { t, frame, link, reason } => format!("{}   dropped #{frame} on {link}: {reason}", ts(t)),
            TraceRecord::DecodeError { t, frame, router, iface, error } => {
                format!("{}   {router}/{iface} rejects #{frame}: {error}", ts(t))
            }
            TraceRecord::State { t, router, change } => format!("{} {router} {change}", ts(t)),
            TraceRecord::Data { t, router, tree, iface, out } => {
                if !all {
                    continue;
                }
                format!("{} {router} data {tree} in {iface} out [{}]", ts(t), out.join(","))
            }
            TraceRecord::Delivered { t, receiver, tree } => {
                if !all {
                    continue;
                }
                format!("{} {receiver} receives {tree}", ts(t))
            }
            TraceRecord::Action { t, line, action } => format!("{} == line {line}: {action}", ts(t)),
            TraceRecord::Assert { t, line, ok, text, detail } => {
                format!("{} {} line {line}: {text} {detail}", ts(t), if ok { "ok" } else { "FAIL" })
            }
            TraceRecord::Violation { t, property, detail } => format!("{} VIOLATION {property}: {detail}", ts(t)),
            TraceRecord::Digest { router, .. } => format!("{:>12} digest of {router} recorded", ""),
        };
        match writeln!(out, "{line}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r?,
        }
    }
    Ok(())
}
