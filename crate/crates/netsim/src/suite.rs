// SPDX-License-Identifier: Apache-2.0

//! Running scenario files and named collections of them.

use crate::scenario::Scenario;
use crate::sim::{RunReport, SimError, SimOptions, Simulator};
use std::path::{Path, PathBuf};

/// Named suites and their directories below the scenario root.
pub const SUITES: [(&str, &str); 3] =
    [("paper-tests", "paper/tests"), ("model-check", "paper/modelcheck"), ("replay", "paper/replay")];

pub fn suite_dir(root: &Path, name: &str) -> Option<PathBuf> {
    SUITES.iter().find(|(n, _)| *n == name).map(|(_, d)| root.join(d))
}

/// The in-repo scenario root.
pub fn default_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Scenario files of a directory, sorted by name.
pub fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs a scenario to its end and returns the simulator for inspection.
pub fn run_scenario(sc: &Scenario, opts: &SimOptions) -> Result<(RunReport, Simulator), SimError> {
    let mut sim = Simulator::from_scenario(sc, opts)?;
    let end = sc.end.unwrap_or_else(|| sc.last_event());
    let report = sim.run(end);
    Ok((report, sim))
}

pub fn run_file(path: &Path, opts: &SimOptions) -> Result<(RunReport, Simulator), SimError> {
    run_scenario(&Scenario::load(path)?, opts)
}
