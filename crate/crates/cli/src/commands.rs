//! The five subcommands. Each returns the process exit code it wants;
//! errors that bubble out as `anyhow` mean malformed input and map to exit
//! code 2 in `main`.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Result};
use serde_json::json;

use fleetidx_core::indexability::{
    default_lambda_grid, numeric_verify, theorem_check, DEFAULT_GRID_POINTS,
};
use fleetidx_core::policies::{Policy, PolicyKind};
use fleetidx_core::sim::{
    benchmark_decision_time, evaluate, generate_scenario, EvaluationConfig, GeneratorConfig,
    RandomStream,
};
use fleetidx_core::solver::{whittle_index_bisection, whittle_indices_adaptive_greedy};

use crate::schema::{
    load_scenario, read_json, write_atomic, write_json_atomic, BenchFile, CheckFile,
    PolicyFailure, RobotCheck, RunManifest, ScenarioFile, SimulateFile, TablesFile,
    FORMAT_VERSION,
};
use crate::{
    BenchArgs, CheckArgs, GenerateArgs, Method, SimulateArgs, SolveArgs, EXIT_NOT_INDEXABLE,
    EXIT_OK, EXIT_ORACLE_MISMATCH,
};

/// Fleet shape used when neither a config file nor flags say otherwise.
const DEFAULT_ROBOTS: usize = 4;
const DEFAULT_OPERATORS: usize = 2;

/// Largest accepted gap between the greedy indices and the bisection
/// oracle. Bisection resolves the index orders of magnitude finer than
/// this, so a genuine disagreement cannot hide inside the tolerance.
const ORACLE_TOLERANCE: f64 = 1e-6;

pub fn generate(args: &GenerateArgs) -> Result<u8> {
    let mut config = match &args.config {
        Some(path) => read_json::<GeneratorConfig>(path)?,
        None => GeneratorConfig::new(DEFAULT_ROBOTS, DEFAULT_OPERATORS, 0),
    };
    if let Some(robots) = args.robots {
        config.robots = robots;
    }
    if let Some(operators) = args.operators {
        config.operators = operators;
    }
    if let Some(waypoints) = args.waypoints {
        config.waypoints_per_robot = waypoints;
    }
    if let Some(zone_mix) = args.zone_mix {
        config.zone_mix = zone_mix;
    }
    if let Some(gamma) = args.gamma {
        config.gamma = gamma;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    let generated = generate_scenario(&config)?;
    let mut manifest = RunManifest::new("generate", serde_json::to_value(&config)?, config.seed);
    manifest.outputs.push(display(&args.out));
    let file = ScenarioFile::from_scenario(&generated.scenario, &generated.kinds, manifest);
    write_json_atomic(&args.out, &file)?;
    println!(
        "wrote {}: {} robots x {} tasks, {} operators, gamma {}, seed {}",
        args.out.display(),
        config.robots,
        config.waypoints_per_robot,
        config.operators,
        config.gamma,
        config.seed,
    );
    Ok(EXIT_OK)
}

pub fn check(args: &CheckArgs) -> Result<u8> {
    let scenario = load_scenario(&args.scenario)?;

    let mut robots = Vec::with_capacity(scenario.robots.len());
    let mut all_indexable = true;
    for (k, robot) in scenario.robots.iter().enumerate() {
        let theorem = match args.method {
            Method::Numeric => None,
            Method::Theorem | Method::Both => Some(theorem_check(robot, scenario.gamma)?),
        };
        let numeric = match args.method {
            Method::Theorem => None,
            Method::Numeric | Method::Both => {
                let grid = default_lambda_grid(robot, scenario.gamma, DEFAULT_GRID_POINTS);
                Some(numeric_verify(robot, scenario.gamma, &grid)?)
            }
        };
        // The sweep is decisive whenever it ran; the closed-form conditions
        // are sufficient but not necessary, so on their own they can only
        // certify, not condemn.
        let indexable = match (&theorem, &numeric) {
            (_, Some(numeric)) => numeric.indexable,
            (Some(theorem), None) => theorem.indexable,
            (None, None) => unreachable!("every method variant runs at least one verifier"),
        };
        let conflict = matches!(
            (&theorem, &numeric),
            (Some(t), Some(n)) if t.indexable && !n.indexable
        );
        if conflict {
            eprintln!(
                "warning: robot {k}: the certificate says indexable but the sweep found a \
                 monotonicity violation; one of the two implementations is wrong"
            );
        }
        all_indexable &= indexable;
        robots.push(RobotCheck {
            robot: k,
            indexable,
            conflict,
            theorem,
            numeric,
        });
    }

    let mut manifest = RunManifest::new(
        "check",
        json!({ "method": args.method.name() }),
        scenario.seed,
    );
    manifest.inputs.push(display(&args.scenario));
    if let Some(out) = &args.out {
        manifest.outputs.push(display(out));
    }
    let file = CheckFile {
        format_version: FORMAT_VERSION,
        gamma: scenario.gamma,
        method: args.method.name().to_string(),
        indexable: all_indexable,
        robots: robots.clone(),
        manifest,
    };

    match &args.out {
        Some(out) => {
            write_json_atomic(out, &file)?;
            for entry in &robots {
                println!(
                    "robot {}: {}",
                    entry.robot,
                    verdict_line(entry)
                );
            }
            println!(
                "wrote {}: scenario is {}",
                out.display(),
                if all_indexable { "indexable" } else { "not certified indexable" }
            );
        }
        None => {
            // The document goes to stdout, so the human-readable lines move
            // to stderr to keep the JSON pipeable.
            let mut text = serde_json::to_string_pretty(&file)?;
            text.push('\n');
            print!("{text}");
            for entry in &robots {
                eprintln!("robot {}: {}", entry.robot, verdict_line(entry));
            }
        }
    }
    Ok(if all_indexable { EXIT_OK } else { EXIT_NOT_INDEXABLE })
}

fn verdict_line(entry: &RobotCheck) -> String {
    let part = |verdict: &Option<fleetidx_core::indexability::IndexabilityVerdict>| {
        verdict
            .as_ref()
            .map(|v| if v.indexable { "yes" } else { "no" })
            .unwrap_or("-")
    };
    format!(
        "{} (theorem {}, numeric {}){}",
        if entry.indexable { "indexable" } else { "not certified" },
        part(&entry.theorem),
        part(&entry.numeric),
        if entry.conflict { ", CONFLICT" } else { "" },
    )
}

pub fn solve(args: &SolveArgs) -> Result<u8> {
    let scenario = load_scenario(&args.scenario)?;

    if args.force {
        eprintln!(
            "warning: --force skips indexability verification; indices of a non-indexable \
             arm carry no guarantee"
        );
    } else {
        let mut not_certified = Vec::new();
        for (k, robot) in scenario.robots.iter().enumerate() {
            // The closed-form check is cheap, so it runs first; the sweep
            // only has to decide the arms the certificate misses.
            if theorem_check(robot, scenario.gamma)?.indexable {
                continue;
            }
            let grid = default_lambda_grid(robot, scenario.gamma, DEFAULT_GRID_POINTS);
            if !numeric_verify(robot, scenario.gamma, &grid)?.indexable {
                not_certified.push(k);
            }
        }
        if !not_certified.is_empty() {
            eprintln!(
                "error: robots {not_certified:?} are not indexable; rerun with --force to \
                 emit indices anyway"
            );
            return Ok(EXIT_NOT_INDEXABLE);
        }
    }

    let mut tables = Vec::with_capacity(scenario.robots.len());
    for robot in &scenario.robots {
        tables.push(whittle_indices_adaptive_greedy(robot, scenario.gamma)?);
    }
    let non_monotone: Vec<usize> = tables
        .iter()
        .enumerate()
        .filter(|(_, table)| !table.monotone)
        .map(|(k, _)| k)
        .collect();
    if !non_monotone.is_empty() {
        eprintln!(
            "warning: round penalties for robots {non_monotone:?} were not non-decreasing; \
             those arms did not behave indexably during the solve"
        );
        if !args.force {
            return Ok(EXIT_NOT_INDEXABLE);
        }
    }

    if args.oracle {
        for (k, (robot, table)) in scenario.robots.iter().zip(&tables).enumerate() {
            for state in robot.enumerate_states() {
                let greedy = table.index_of(state, robot.num_tasks());
                let oracle = whittle_index_bisection(robot, scenario.gamma, state)?;
                let gap = (greedy - oracle).abs();
                if gap > ORACLE_TOLERANCE {
                    eprintln!(
                        "error: oracle mismatch at robot {k} state {state:?}: \
                         greedy {greedy}, bisection {oracle}, gap {gap:e}"
                    );
                    return Ok(EXIT_ORACLE_MISMATCH);
                }
            }
        }
    }

    let mut manifest = RunManifest::new(
        "solve",
        json!({ "force": args.force, "oracle": args.oracle }),
        scenario.seed,
    );
    manifest.inputs.push(display(&args.scenario));
    manifest.outputs.push(display(&args.out));
    let file = TablesFile {
        format_version: FORMAT_VERSION,
        gamma: scenario.gamma,
        tables,
        manifest,
    };
    write_json_atomic(&args.out, &file)?;
    println!(
        "wrote {}: index tables for {} robots{}",
        args.out.display(),
        scenario.robots.len(),
        if args.oracle { ", oracle-checked" } else { "" },
    );
    Ok(EXIT_OK)
}

pub fn simulate(args: &SimulateArgs) -> Result<u8> {
    let scenario = load_scenario(&args.scenario)?;
    let kinds = parse_policies(&args.policies)?;
    let csv_path = args.out.with_extension("csv");
    if csv_path == args.out {
        bail!("--out is the JSON report path and must not end in .csv; the tabular copy is written next to it");
    }

    let seed = args.seed.unwrap_or(scenario.seed);
    let stream = RandomStream::new(seed);
    let mut policies: Vec<Policy> = Vec::new();
    let mut failures: Vec<PolicyFailure> = Vec::new();
    for kind in &kinds {
        match kind.build(&scenario) {
            Ok(policy) => policies.push(policy),
            Err(err) => {
                eprintln!("warning: {} refused to build: {err}", kind.name());
                failures.push(PolicyFailure {
                    policy: kind.name().to_string(),
                    error: err.to_string(),
                });
            }
        }
    }

    let timeout = (args.timeout > 0.0).then(|| Duration::from_secs_f64(args.timeout));
    let config = EvaluationConfig {
        iterations: args.iterations,
        per_rollout_timeout: timeout,
        common_random_numbers: !args.independent_noise,
        instance_id: 0,
    };
    let reports = evaluate(&scenario, &policies, &stream, &config)?;

    let robots = scenario.num_robots();
    let by_name: HashMap<&str, &fleetidx_core::sim::RolloutReport> =
        reports.iter().map(|r| (r.policy.as_str(), r)).collect();
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["policy", "K", "M", "mean_cost_per_robot", "std", "timed_out"])?;
    for kind in &kinds {
        match by_name.get(kind.name()) {
            Some(report) => {
                // The std column is per robot to match the mean column.
                let std_per_robot = report.std_cost.map(|s| s / robots as f64);
                csv.write_record([
                    kind.name().to_string(),
                    robots.to_string(),
                    scenario.operators.to_string(),
                    cell(report.mean_cost_per_robot),
                    cell(std_per_robot),
                    report.timed_out.to_string(),
                ])?;
            }
            None => {
                // Refusal row: the policy never ran, so the stat cells stay
                // empty and the timeout flag stays false. The JSON report
                // carries the reason.
                csv.write_record([
                    kind.name().to_string(),
                    robots.to_string(),
                    scenario.operators.to_string(),
                    String::new(),
                    String::new(),
                    "false".to_string(),
                ])?;
            }
        }
    }
    let csv_bytes = csv.into_inner()?;

    let mut manifest = RunManifest::new(
        "simulate",
        json!({
            "policies": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
            "iterations": args.iterations,
            "timeout_seconds": args.timeout,
            "common_random_numbers": !args.independent_noise,
        }),
        seed,
    );
    manifest.inputs.push(display(&args.scenario));
    manifest.outputs.push(display(&args.out));
    manifest.outputs.push(display(&csv_path));
    // The payload carries decision timings, so the manifest may carry a
    // wall-clock stamp without breaking reproducibility promises.
    manifest.stamp();

    for report in &reports {
        match (report.mean_cost, report.mean_cost_per_robot) {
            (Some(mean), Some(per_robot)) => println!(
                "{}: mean discounted cost {:.4} ({:.4} per robot), {} rollouts",
                report.policy, mean, per_robot, report.iterations,
            ),
            _ => println!("{}: timed out, no statistics", report.policy),
        }
    }
    let file = SimulateFile {
        format_version: FORMAT_VERSION,
        robots,
        operators: scenario.operators,
        gamma: scenario.gamma,
        iterations: args.iterations,
        timeout_seconds: timeout.map(|d| d.as_secs_f64()),
        common_random_numbers: !args.independent_noise,
        reports,
        failures,
        manifest,
    };
    write_json_atomic(&args.out, &file)?;
    write_atomic(&csv_path, &csv_bytes)?;
    println!("wrote {} and {}", args.out.display(), csv_path.display());
    Ok(EXIT_OK)
}

pub fn bench(args: &BenchArgs) -> Result<u8> {
    let scenario = load_scenario(&args.scenario)?;
    let kinds = parse_policies(&args.policies)?;
    let csv_path = args.out.with_extension("csv");
    if csv_path == args.out {
        bail!("--out is the JSON report path and must not end in .csv; the tabular copy is written next to it");
    }

    let seed = args.seed.unwrap_or(scenario.seed);
    let stream = RandomStream::new(seed);
    let mut reports = Vec::new();
    let mut failures: Vec<PolicyFailure> = Vec::new();
    // One call per policy, so a refusal (the exact joint solver past its
    // state-space cap) skips that policy instead of aborting the run.
    for kind in &kinds {
        match benchmark_decision_time(&scenario, &[*kind], &stream, args.iterations) {
            Ok(mut batch) => reports.append(&mut batch),
            Err(err) => {
                eprintln!("warning: {} skipped: {err}", kind.name());
                failures.push(PolicyFailure {
                    policy: kind.name().to_string(),
                    error: err.to_string(),
                });
            }
        }
    }

    let robots = scenario.num_robots();
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["policy", "K", "M", "precompute_s", "per_decision_s"])?;
    for report in &reports {
        csv.write_record([
            report.policy.clone(),
            robots.to_string(),
            scenario.operators.to_string(),
            report.precompute_seconds.to_string(),
            report.per_decision_seconds.to_string(),
        ])?;
        println!(
            "{}: precompute {:.3e} s, per decision {:.3e} s over {} decisions",
            report.policy, report.precompute_seconds, report.per_decision_seconds, report.decisions,
        );
    }
    let csv_bytes = csv.into_inner()?;

    let mut manifest = RunManifest::new(
        "bench",
        json!({
            "policies": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
            "iterations": args.iterations,
        }),
        seed,
    );
    manifest.inputs.push(display(&args.scenario));
    manifest.outputs.push(display(&args.out));
    manifest.outputs.push(display(&csv_path));
    manifest.stamp();

    let file = BenchFile {
        format_version: FORMAT_VERSION,
        robots,
        operators: scenario.operators,
        gamma: scenario.gamma,
        reports,
        failures,
        manifest,
    };
    write_json_atomic(&args.out, &file)?;
    write_atomic(&csv_path, &csv_bytes)?;
    println!("wrote {} and {}", args.out.display(), csv_path.display());
    Ok(EXIT_OK)
}

/// Parse a comma-separated policy list, preserving order and dropping
/// duplicates.
fn parse_policies(list: &str) -> Result<Vec<PolicyKind>> {
    let mut kinds: Vec<PolicyKind> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let kind: PolicyKind = name.parse()?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        bail!("no policies requested");
    }
    Ok(kinds)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}
