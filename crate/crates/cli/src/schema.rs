//! On-disk artifact formats and the provenance manifest.
//!
//! Every file the tool writes is JSON with a `format_version` field and an
//! embedded [`RunManifest`], so an artifact found on disk months later still
//! says which command produced it, from which inputs, with which seed.
//! Writes go through a temp file in the target directory followed by a
//! rename, so readers never observe a half-written artifact.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fleetidx_core::indexability::IndexabilityVerdict;
use fleetidx_core::model::{JointScenario, RobotModel, TaskCost, TaskTransition};
use fleetidx_core::sim::{BenchmarkReport, RolloutReport, TaskKind};
use fleetidx_core::solver::IndexTable;

/// Version stamp written into every artifact. Readers reject other values.
pub const FORMAT_VERSION: u32 = 1;

/// Provenance block embedded in every artifact: the command, its effective
/// configuration after flag overrides, the master seed, and the files read
/// and written. Rerunning the recorded command on the recorded inputs
/// reproduces the artifact byte for byte, except for fields that measure
/// wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration snapshot; its shape varies per command.
    pub config: serde_json::Value,
    /// Master seed. All randomness in the run derives from it through
    /// named streams; there is no ambient entropy.
    pub seed: u64,
    pub tool_version: String,
    /// Seconds since the Unix epoch. Present only in artifacts that carry
    /// timing measurements; deterministic artifacts omit it so reruns stay
    /// byte-identical.
    pub timestamp: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Record the wall-clock time. Only for artifacts whose payload is
    /// already non-reproducible (timing measurements).
    pub fn stamp(&mut self) {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.timestamp = Some(now);
    }
}

/// One task in a scenario file: the transition probabilities plus the
/// declared family, which load-time validation checks against the numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    #[serde(rename = "type")]
    pub kind: TaskKind,
    #[serde(flatten)]
    pub transition: TaskTransition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotEntry {
    pub tasks: Vec<TaskEntry>,
    pub costs: Vec<TaskCost>,
    pub teleop_surcharge: f64,
}

/// A problem instance on disk. The master seed lives in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub gamma: f64,
    pub operators: usize,
    pub robots: Vec<RobotEntry>,
    pub manifest: RunManifest,
}

impl ScenarioFile {
    pub fn from_scenario(
        scenario: &JointScenario,
        kinds: &[Vec<TaskKind>],
        manifest: RunManifest,
    ) -> ScenarioFile {
        let robots = scenario
            .robots
            .iter()
            .zip(kinds)
            .map(|(robot, robot_kinds)| RobotEntry {
                tasks: robot
                    .tasks
                    .iter()
                    .zip(robot_kinds)
                    .map(|(tr, &kind)| TaskEntry {
                        kind,
                        transition: *tr,
                    })
                    .collect(),
                costs: robot.costs.clone(),
                teleop_surcharge: robot.teleop_surcharge,
            })
            .collect();
        ScenarioFile {
            format_version: FORMAT_VERSION,
            gamma: scenario.gamma,
            operators: scenario.operators,
            robots,
            manifest,
        }
    }

    /// Validate and convert to the in-memory scenario. Rejects version
    /// mismatches, structural violations, and any task whose declared
    /// family disagrees with its probabilities.
    pub fn into_scenario(self) -> Result<JointScenario> {
        if self.format_version != FORMAT_VERSION {
            bail!(
                "unsupported format_version {} (this build reads {})",
                self.format_version,
                FORMAT_VERSION
            );
        }
        let mut robots = Vec::with_capacity(self.robots.len());
        for (k, entry) in self.robots.iter().enumerate() {
            for (n, task) in entry.tasks.iter().enumerate() {
                let actual = TaskKind::of(&task.transition);
                if task.kind != actual {
                    bail!(
                        "robot {k} task {n} is declared {} but its probabilities are {}",
                        task.kind,
                        actual
                    );
                }
            }
            robots.push(RobotModel {
                tasks: entry.tasks.iter().map(|t| t.transition).collect(),
                costs: entry.costs.clone(),
                teleop_surcharge: entry.teleop_surcharge,
            });
        }
        let scenario = JointScenario {
            robots,
            operators: self.operators,
            gamma: self.gamma,
            seed: self.manifest.seed,
        };
        scenario.require_valid()?;
        Ok(scenario)
    }
}

/// Indexability verdict for one robot. `theorem` and `numeric` are present
/// according to the requested method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotCheck {
    pub robot: usize,
    pub indexable: bool,
    /// True when the closed-form certificate claimed indexable but the
    /// penalty sweep found a monotonicity violation. The certificate is
    /// sufficient, so this combination indicates a defect in one of the
    /// two implementations and is worth a bug report. The reverse
    /// combination is expected: the certificate is not necessary.
    pub conflict: bool,
    pub theorem: Option<IndexabilityVerdict>,
    pub numeric: Option<IndexabilityVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckFile {
    pub format_version: u32,
    pub gamma: f64,
    pub method: String,
    pub indexable: bool,
    pub robots: Vec<RobotCheck>,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablesFile {
    pub format_version: u32,
    pub gamma: f64,
    /// One table per robot, in scenario order.
    pub tables: Vec<IndexTable>,
    pub manifest: RunManifest,
}

/// A policy that refused to build, with the reason. The run continues
/// without it; the refusal is part of the result, not an abort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFailure {
    pub policy: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateFile {
    pub format_version: u32,
    pub robots: usize,
    pub operators: usize,
    pub gamma: f64,
    pub iterations: usize,
    pub timeout_seconds: Option<f64>,
    pub common_random_numbers: bool,
    pub reports: Vec<RolloutReport>,
    pub failures: Vec<PolicyFailure>,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFile {
    pub format_version: u32,
    pub robots: usize,
    pub operators: usize,
    pub gamma: f64,
    pub reports: Vec<BenchmarkReport>,
    pub failures: Vec<PolicyFailure>,
    pub manifest: RunManifest,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_scenario(path: &Path) -> Result<JointScenario> {
    let file: ScenarioFile = read_json(path)?;
    file.into_scenario()
        .with_context(|| format!("validating {}", path.display()))
}

/// Write through a temp file in the destination directory plus a rename, so
/// a crash mid-write never leaves a truncated artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
