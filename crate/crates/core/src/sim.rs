//! Seeded Monte Carlo simulation of operator allocation over a fleet.
//!
//! Three pieces share this module:
//!
//! * a scenario generator that draws task chains from calibrated
//!   probability ranges, with the fault-reset family clamped to the
//!   closed-form bounds so every generated arm carries an indexability
//!   certificate by construction,
//! * a rollout engine that steps the joint fleet state under any policy,
//!   accruing discounted cost until every robot reaches its goal or a
//!   provably negligible tail is cut off, and
//! * aggregation: paired policy evaluation under common random numbers,
//!   and single-threaded decision-latency benchmarks.
//!
//! Determinism is a contract here, not an accident. All randomness fans
//! out of one master seed through `RandomStream`, every (instance,
//! iteration) cell gets its own generator, and the engine draws exactly
//! one uniform per robot per step, goal-parked robots included, so
//! trajectories stay aligned across policies and across model edits to
//! unrelated robots.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::indexability::reset_bounds;
use crate::model::{Action, JointScenario, OperatingState, RobotModel, TaskCost, TaskTransition};
use crate::policies::{Allocation, JointState, Policy, PolicyKind};
use crate::{Error, Result};

/// Discounted cost mass allowed past the truncation horizon.
const TAIL_EPSILON: f64 = 1e-6;

/// Whole-task redraw attempts before the generator gives up on a
/// probability-range configuration.
const GENERATOR_RETRY_CAP: usize = 1_000;

/// Decide calls discarded before the benchmark timer starts.
const BENCHMARK_WARMUP: usize = 100;

/// Distinct joint states the benchmark loop cycles through.
const BENCHMARK_STATE_POOL: usize = 256;

/// Substream labels under the master seed. The tie-break and independent
/// environment labels get the policy index added, and the spacing keeps
/// every label distinct for any plausible policy count.
const GENERATOR_SALT: u64 = 1;
const BENCHMARK_SALT: u64 = 2;
const TIE_BREAK_SALT: u64 = 1_000;
const INDEPENDENT_ENV_SALT: u64 = 2_000;

/// Fleet shape defaults shared by the generator and the command line.
pub const DEFAULT_WAYPOINTS_PER_ROBOT: usize = 7;
pub const DEFAULT_ZONE_MIX: f64 = 0.5;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_ITERATIONS: usize = 500;
pub const DEFAULT_TIMEOUT_SECONDS: u64 = 10;

/// Cost parameters applied uniformly to every generated task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Per-step cost of an unfinished task in the normal state.
    pub rho: f64,
    /// Per-step cost of an unfinished task in the fault state.
    pub phi: f64,
    /// Extra per-step cost whenever an operator is allocated.
    pub teleop_surcharge: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { rho: 2.0, phi: 4.0, teleop_surcharge: 0.75 }
    }
}

/// Uniform sampling ranges for the generated transition probabilities.
///
/// The ranges are expressed over stay and fault probabilities, success
/// takes the remainder. The reset family does not get a fixed fault range:
/// its upper edge is the largest autonomous fault probability that keeps
/// the arm certifiably indexable for the already-drawn stay probabilities,
/// and its recovery probability is floored at the matching bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRanges {
    /// Autonomous stay probability, both task families.
    pub stay_autonomous: (f64, f64),
    /// Autonomous fault probability, continuation family.
    pub fault_autonomous: (f64, f64),
    /// Lower edge of the autonomous fault range, reset family. The upper
    /// edge comes from the indexability bound.
    pub fault_autonomous_floor: f64,
    /// Teleoperated stay probability from the normal state, both families.
    pub stay_teleop: (f64, f64),
    /// Hard floor and ceiling for the reset-family recovery probability.
    pub recovery_floor: f64,
    pub recovery_ceiling: f64,
}

impl Default for ProbabilityRanges {
    fn default() -> Self {
        ProbabilityRanges {
            stay_autonomous: (0.2, 0.5),
            fault_autonomous: (0.2, 0.5),
            fault_autonomous_floor: 0.1,
            stay_teleop: (0.1, 0.4),
            recovery_floor: 0.1,
            recovery_ceiling: 0.9,
        }
    }
}

impl ProbabilityRanges {
    fn validate(&self) -> Result<()> {
        let ranges = [
            ("stay_autonomous", self.stay_autonomous),
            ("fault_autonomous", self.fault_autonomous),
            ("stay_teleop", self.stay_teleop),
            ("recovery", (self.recovery_floor, self.recovery_ceiling)),
        ];
        for (name, (lo, hi)) in ranges {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::InvalidScenario(format!(
                    "{name} range [{lo}, {hi}] must be ordered and lie within [0, 1]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.fault_autonomous_floor) {
            return Err(Error::InvalidScenario(format!(
                "fault_autonomous_floor = {} must lie in [0, 1]",
                self.fault_autonomous_floor
            )));
        }
        if self.stay_autonomous.1 + self.fault_autonomous.1 > 1.0 {
            return Err(Error::InvalidScenario(
                "stay_autonomous and fault_autonomous ranges must leave room for a \
                 nonnegative success probability"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Structural family of a task's teleoperation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// A fault degrades autonomy but teleoperation works the task from the
    /// fault state exactly as from normal.
    Continuation,
    /// A fault blocks the task; teleoperation can only restore the normal
    /// state, never complete the task directly.
    Reset,
    /// Anything else. The generator never draws this; it labels
    /// hand-written tasks that fit neither closed form.
    General,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Continuation => "continuation",
            TaskKind::Reset => "reset",
            TaskKind::General => "general",
        }
    }

    /// Classify a transition by shape, most specific family first.
    pub fn of(tr: &TaskTransition) -> TaskKind {
        if tr.is_continuation_shape() {
            TaskKind::Continuation
        } else if tr.is_reset_shape() {
            TaskKind::Reset
        } else {
            TaskKind::General
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything the scenario generator needs, including the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub robots: usize,
    pub operators: usize,
    pub waypoints_per_robot: usize,
    /// Probability that a task is drawn from the continuation family; the
    /// rest are reset tasks.
    pub zone_mix: f64,
    pub ranges: ProbabilityRanges,
    pub costs: CostParams,
    pub gamma: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Calibrated defaults for everything except the fleet shape.
    pub fn new(robots: usize, operators: usize, seed: u64) -> Self {
        GeneratorConfig {
            robots,
            operators,
            waypoints_per_robot: DEFAULT_WAYPOINTS_PER_ROBOT,
            zone_mix: DEFAULT_ZONE_MIX,
            ranges: ProbabilityRanges::default(),
            costs: CostParams::default(),
            gamma: DEFAULT_GAMMA,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.robots == 0 {
            return Err(Error::InvalidScenario("generator needs at least one robot".into()));
        }
        if self.operators == 0 || self.operators > self.robots {
            return Err(Error::InvalidScenario(format!(
                "operators = {} must satisfy 1 <= M <= K = {}",
                self.operators, self.robots
            )));
        }
        if self.waypoints_per_robot == 0 {
            return Err(Error::InvalidScenario(
                "each robot needs at least one waypoint".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.zone_mix) {
            return Err(Error::InvalidScenario(format!(
                "zone_mix = {} must lie in [0, 1]",
                self.zone_mix
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "gamma = {} must lie strictly inside (0, 1)",
                self.gamma
            )));
        }
        if self.costs.rho < 0.0 || self.costs.phi < 0.0 || self.costs.teleop_surcharge < 0.0 {
            return Err(Error::InvalidScenario("costs must be nonnegative".into()));
        }
        self.ranges.validate()
    }
}

/// A generated scenario plus the family drawn for each task, indexed
/// `kinds[robot][task]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedScenario {
    pub scenario: JointScenario,
    pub kinds: Vec<Vec<TaskKind>>,
}

fn uniform_in<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

fn draw_continuation<R: Rng>(rng: &mut R, ranges: &ProbabilityRanges) -> TaskTransition {
    let r0 = uniform_in(rng, ranges.stay_autonomous);
    let q0 = uniform_in(rng, ranges.fault_autonomous);
    let r1n0 = uniform_in(rng, ranges.stay_teleop);
    let p1n0 = 1.0 - r1n0;
    // Equal stay probabilities in both teleoperated modes make the fault a
    // pure continuation: same success rate, no new faults.
    TaskTransition { p0: 1.0 - r0 - q0, q0, p1n0, q1n0: 0.0, p1n1: p1n0, q1n1: 0.0 }
}

fn draw_reset<R: Rng>(
    rng: &mut R,
    ranges: &ProbabilityRanges,
    gamma: f64,
) -> Result<TaskTransition> {
    for _ in 0..GENERATOR_RETRY_CAP {
        let r0 = uniform_in(rng, ranges.stay_autonomous);
        let r1n0 = uniform_in(rng, ranges.stay_teleop);
        let mut task = TaskTransition {
            p0: 1.0 - r0,
            q0: 0.0,
            p1n0: 1.0 - r1n0,
            q1n0: 0.0,
            p1n1: 0.0,
            q1n1: 0.0,
        };
        // The fault-probability cap does not depend on q0, so a zero-q0
        // probe reads it off before q0 is drawn.
        let (_, q0_max) = reset_bounds(&task, gamma)?;
        let q0_hi = q0_max.min(1.0 - r0);
        if q0_hi <= ranges.fault_autonomous_floor {
            continue;
        }
        task.q0 = rng.gen_range(ranges.fault_autonomous_floor..q0_hi);
        task.p0 = 1.0 - r0 - task.q0;
        let (q1n1_min, _) = reset_bounds(&task, gamma)?;
        let q1_lo = q1n1_min.max(ranges.recovery_floor);
        if q1_lo >= ranges.recovery_ceiling {
            continue;
        }
        task.q1n1 = rng.gen_range(q1_lo..ranges.recovery_ceiling);
        return Ok(task);
    }
    Err(Error::Generator(format!(
        "no reset task satisfied the indexability bounds after {GENERATOR_RETRY_CAP} \
         attempts (gamma = {gamma})"
    )))
}

/// Draw a complete scenario from `config`.
///
/// Tasks are drawn robot by robot, waypoint by waypoint: first the family
/// (continuation with probability `zone_mix`), then the probabilities in a
/// fixed order. The reset family redraws the whole task whenever the
/// indexability bounds leave an empty feasible interval, so every emitted
/// scenario is valid and certifiable.
pub fn generate_scenario(config: &GeneratorConfig) -> Result<GeneratedScenario> {
    config.validate()?;
    let mut rng = RandomStream::new(config.seed).derived(GENERATOR_SALT).rng(0, 0);
    let mut robots = Vec::with_capacity(config.robots);
    let mut kinds = Vec::with_capacity(config.robots);
    for _ in 0..config.robots {
        let mut tasks = Vec::with_capacity(config.waypoints_per_robot);
        let mut task_kinds = Vec::with_capacity(config.waypoints_per_robot);
        for _ in 0..config.waypoints_per_robot {
            let kind = if rng.gen::<f64>() < config.zone_mix {
                TaskKind::Continuation
            } else {
                TaskKind::Reset
            };
            let task = match kind {
                TaskKind::Continuation => draw_continuation(&mut rng, &config.ranges),
                TaskKind::Reset => draw_reset(&mut rng, &config.ranges, config.gamma)?,
                TaskKind::General => unreachable!("the generator only draws the closed forms"),
            };
            tasks.push(task);
            task_kinds.push(kind);
        }
        let costs = vec![
            TaskCost { rho: config.costs.rho, phi: config.costs.phi };
            config.waypoints_per_robot
        ];
        robots.push(RobotModel { tasks, costs, teleop_surcharge: config.costs.teleop_surcharge });
        kinds.push(task_kinds);
    }
    let scenario = JointScenario {
        robots,
        operators: config.operators,
        gamma: config.gamma,
        seed: config.seed,
    };
    scenario.require_valid()?;
    Ok(GeneratedScenario { scenario, kinds })
}

/// One unconstrained transition draw for indexability surveys. Each of the
/// three operating modes gets an independent simplex point: stay uniform
/// on [0, 1], fault uniform on what stay leaves, success the remainder.
/// Redrawn until teleoperation can leave the fault state, since models
/// violating that are rejected everywhere downstream.
pub fn random_unbounded_task<R: Rng>(rng: &mut R) -> TaskTransition {
    fn slot<R: Rng>(rng: &mut R) -> (f64, f64) {
        let stay: f64 = rng.gen();
        let toggle = rng.gen::<f64>() * (1.0 - stay);
        (1.0 - stay - toggle, toggle)
    }
    loop {
        let (p0, q0) = slot(rng);
        let (p1n0, q1n0) = slot(rng);
        let (p1n1, q1n1) = slot(rng);
        let task = TaskTransition { p0, q0, p1n0, q1n0, p1n1, q1n1 };
        if p1n1 + q1n1 > 0.0 {
            return task;
        }
    }
}

/// A single-task robot around [`random_unbounded_task`], redrawn until the
/// whole model validates.
pub fn random_unbounded_model<R: Rng>(rng: &mut R, costs: &CostParams) -> RobotModel {
    loop {
        let model = RobotModel {
            tasks: vec![random_unbounded_task(rng)],
            costs: vec![TaskCost { rho: costs.rho, phi: costs.phi }],
            teleop_surcharge: costs.teleop_surcharge,
        };
        if model.validate().is_empty() {
            return model;
        }
    }
}

/// Deterministic fan-out of one master seed into independent generators.
///
/// Identical (seed, instance, iteration) labels reproduce identical draws;
/// distinct labels land on unrelated seeds because every label passes
/// through a 64-bit finalizing mix before seeding the stream cipher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    seed: u64,
}

fn mix(value: u64) -> u64 {
    // SplitMix64's finalizer: an odd bijection with full avalanche, so
    // nearby labels cannot produce correlated cipher seeds.
    let mut z = value.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The generator for one (instance, iteration) cell.
    pub fn rng(&self, instance: u64, iteration: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed ^ mix(instance ^ mix(iteration))))
    }

    /// A stream on a disjoint substream of the same master seed.
    pub fn derived(&self, salt: u64) -> RandomStream {
        RandomStream { seed: mix(self.seed ^ mix(salt)) }
    }
}

/// One robot's transition kernel in sampling form: per (state, action),
/// the step cost and the cumulative successor distribution.
struct ArmKernel {
    num_tasks: usize,
    cost: Vec<[f64; 2]>,
    cumulative: Vec<[Vec<(f64, usize)>; 2]>,
}

impl ArmKernel {
    fn new(model: &RobotModel) -> Result<ArmKernel> {
        let num_tasks = model.num_tasks();
        let states = model.enumerate_states();
        let mut cost = Vec::with_capacity(states.len());
        let mut cumulative = Vec::with_capacity(states.len());
        for &state in &states {
            let mut state_cost = [0.0; 2];
            let mut state_rows: [Vec<(f64, usize)>; 2] = [Vec::new(), Vec::new()];
            for action in [Action::Passive, Action::Active] {
                state_cost[action.index()] = model.step_cost(state, action)?;
                let mut edge = 0.0;
                let mut row = Vec::new();
                for (successor, probability) in model.transition_distribution(state, action)? {
                    edge += probability;
                    row.push((edge, successor.canonical_index(num_tasks)));
                }
                // Pin the last edge to one so a uniform draw can never fall
                // off the end of the table when the float sum lands short.
                row.last_mut().expect("distributions have support").0 = 1.0;
                state_rows[action.index()] = row;
            }
            cost.push(state_cost);
            cumulative.push(state_rows);
        }
        Ok(ArmKernel { num_tasks, cost, cumulative })
    }

    fn next(&self, state: usize, action: usize, u: f64) -> usize {
        let row = &self.cumulative[state][action];
        for &(edge, successor) in row {
            if u < edge {
                return successor;
            }
        }
        row[row.len() - 1].1
    }
}

/// What one rollout produced. Timing covers only the policy's decide
/// calls, not environment stepping.
#[derive(Debug, Clone)]
pub struct RolloutOutcome {
    pub discounted_cost: f64,
    pub steps: usize,
    /// The horizon cap fired before every robot reached its goal.
    pub truncated: bool,
    /// Upper bound on the discounted cost the truncation discarded; zero
    /// when the fleet finished.
    pub truncation_bound: f64,
    pub decision_seconds: f64,
    pub decisions: usize,
    /// The per-rollout timeout fired; the cost fields are partial.
    pub timed_out: bool,
}

/// Steps a joint scenario forward under sampled transitions.
///
/// The engine draws exactly one uniform per robot per step, in robot
/// order, whether or not the robot can move. That fixed draw schedule is
/// what keeps common-random-number comparisons paired and keeps one
/// robot's trajectory invariant to edits in another robot's model.
pub struct RolloutEngine {
    gamma: f64,
    operators: usize,
    robots: Vec<ArmKernel>,
    horizon_cap: usize,
    /// `K * C_max / (1 - gamma)`, the largest discounted cost any rollout
    /// can accrue and the scale of every truncation bound.
    cost_ceiling: f64,
}

impl RolloutEngine {
    pub fn new(scenario: &JointScenario) -> Result<RolloutEngine> {
        scenario.require_valid()?;
        let gamma = scenario.gamma;
        let per_step = scenario.num_robots() as f64 * scenario.max_step_cost();
        let cost_ceiling = per_step / (1.0 - gamma);
        // Smallest T with gamma^T * ceiling <= TAIL_EPSILON, so stopping at
        // T discards a provably negligible tail.
        let horizon_cap = if cost_ceiling <= TAIL_EPSILON {
            1
        } else {
            ((TAIL_EPSILON / cost_ceiling).ln() / gamma.ln()).ceil().max(1.0) as usize
        };
        let robots = scenario.robots.iter().map(ArmKernel::new).collect::<Result<Vec<_>>>()?;
        Ok(RolloutEngine { gamma, operators: scenario.operators, robots, horizon_cap, cost_ceiling })
    }

    pub fn horizon_cap(&self) -> usize {
        self.horizon_cap
    }

    pub fn cost_ceiling(&self) -> f64 {
        self.cost_ceiling
    }

    /// Advance every robot one step. Returns the successor state and the
    /// fleet's undiscounted cost for this step.
    pub fn step<R: Rng>(
        &self,
        state: &JointState,
        allocation: &Allocation,
        rng: &mut R,
    ) -> (JointState, f64) {
        debug_assert_eq!(state.per_robot.len(), self.robots.len());
        let mut cost = 0.0;
        let mut next = Vec::with_capacity(self.robots.len());
        for (k, kernel) in self.robots.iter().enumerate() {
            let u: f64 = rng.gen();
            let index = state.per_robot[k].canonical_index(kernel.num_tasks);
            let action = allocation.action(k).index();
            cost += kernel.cost[index][action];
            next.push(OperatingState::from_canonical_index(
                kernel.next(index, action, u),
                kernel.num_tasks,
            ));
        }
        (JointState { per_robot: next }, cost)
    }

    /// Roll out `policy` from the fleet's start state, every robot at the
    /// normal state of its first task.
    pub fn rollout<RE: Rng, RT: Rng>(
        &self,
        policy: &Policy,
        env_rng: &mut RE,
        tie_rng: &mut RT,
        timeout: Option<Duration>,
    ) -> RolloutOutcome {
        self.rollout_from(JointState::initial(self.robots.len()), policy, env_rng, tie_rng, timeout)
    }

    pub fn rollout_from<RE: Rng, RT: Rng>(
        &self,
        start: JointState,
        policy: &Policy,
        env_rng: &mut RE,
        tie_rng: &mut RT,
        timeout: Option<Duration>,
    ) -> RolloutOutcome {
        let begun = Instant::now();
        let mut state = start;
        let mut discount = 1.0;
        let mut discounted_cost = 0.0;
        let mut decision_seconds = 0.0;
        let mut decisions = 0usize;
        let mut steps = 0usize;
        let mut timed_out = false;

        while steps < self.horizon_cap && !state.all_goal() {
            if let Some(limit) = timeout {
                if begun.elapsed() >= limit {
                    timed_out = true;
                    break;
                }
            }
            let before = Instant::now();
            let allocation = policy.decide(&state, tie_rng);
            decision_seconds += before.elapsed().as_secs_f64();
            decisions += 1;
            debug_assert!(allocation.is_feasible(&state, self.operators));
            let (next, cost) = self.step(&state, &allocation, env_rng);
            discounted_cost += discount * cost;
            discount *= self.gamma;
            state = next;
            steps += 1;
        }

        let finished = state.all_goal();
        RolloutOutcome {
            discounted_cost,
            steps,
            truncated: !finished && !timed_out,
            truncation_bound: if finished { 0.0 } else { discount * self.cost_ceiling },
            decision_seconds,
            decisions,
            timed_out,
        }
    }
}

/// How an evaluation batch runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub iterations: usize,
    /// Wall-clock budget for a single rollout. A policy that exceeds it is
    /// reported with the timeout flag instead of statistics.
    pub per_rollout_timeout: Option<Duration>,
    /// Drive every policy with the same environment noise per iteration.
    /// Off, each policy gets its own noise substream.
    pub common_random_numbers: bool,
    /// Folded into every rollout's stream label so batches over many
    /// scenario instances draw independent noise from one master seed.
    pub instance_id: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            iterations: DEFAULT_ITERATIONS,
            per_rollout_timeout: Some(Duration::from_secs(DEFAULT_TIMEOUT_SECONDS)),
            common_random_numbers: true,
            instance_id: 0,
        }
    }
}

/// Aggregated rollout statistics for one policy on one scenario. The
/// statistics are absent when the policy timed out, in which case
/// `iterations` counts only the rollouts that completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub policy: String,
    pub iterations: usize,
    pub mean_cost: Option<f64>,
    pub std_cost: Option<f64>,
    pub mean_cost_per_robot: Option<f64>,
    pub mean_decision_seconds: f64,
    pub timed_out: bool,
    pub truncated_rollouts: usize,
}

/// Neumaier's compensated sum: immune to cancellation between elements of
/// wildly different magnitude, and deterministic for a fixed order.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut compensation = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}

fn summarize(policy: String, num_robots: usize, outcomes: &[Option<RolloutOutcome>]) -> RolloutReport {
    let ran: Vec<&RolloutOutcome> = outcomes.iter().flatten().collect();
    let timed_out = ran.iter().any(|o| o.timed_out);
    let decisions: usize = ran.iter().map(|o| o.decisions).sum();
    let mean_decision_seconds = if decisions > 0 {
        compensated_sum(ran.iter().map(|o| o.decision_seconds)) / decisions as f64
    } else {
        0.0
    };
    let completed: Vec<&&RolloutOutcome> = ran.iter().filter(|o| !o.timed_out).collect();
    let truncated_rollouts = completed.iter().filter(|o| o.truncated).count();
    let iterations = completed.len();
    if timed_out || iterations == 0 {
        return RolloutReport {
            policy,
            iterations,
            mean_cost: None,
            std_cost: None,
            mean_cost_per_robot: None,
            mean_decision_seconds,
            timed_out: true,
            truncated_rollouts,
        };
    }
    let costs: Vec<f64> = completed.iter().map(|o| o.discounted_cost).collect();
    let n = costs.len() as f64;
    let mean = compensated_sum(costs.iter().copied()) / n;
    let std = if costs.len() >= 2 {
        (compensated_sum(costs.iter().map(|c| (c - mean) * (c - mean))) / (n - 1.0))
            .max(0.0)
            .sqrt()
    } else {
        0.0
    };
    RolloutReport {
        policy,
        iterations,
        mean_cost: Some(mean),
        std_cost: Some(std),
        mean_cost_per_robot: Some(mean / num_robots as f64),
        mean_decision_seconds,
        timed_out: false,
        truncated_rollouts,
    }
}

/// Monte Carlo evaluation of several policies on one scenario.
///
/// Iterations run in parallel, each on its own (instance, iteration)
/// stream, and are reduced in iteration order with compensated summation,
/// so reports are bit-reproducible for a fixed configuration. Under
/// common random numbers every policy sees the same environment stream
/// per iteration; tie-breaking draws always come from per-policy streams
/// so one policy's sampling appetite cannot shift another's noise.
///
/// A rollout that exceeds the per-rollout timeout flags its policy,
/// stops that policy's remaining iterations, and leaves the statistics
/// unreported.
pub fn evaluate(
    scenario: &JointScenario,
    policies: &[Policy],
    stream: &RandomStream,
    config: &EvaluationConfig,
) -> Result<Vec<RolloutReport>> {
    if config.iterations == 0 {
        return Err(Error::InvalidScenario("evaluation needs at least one iteration".into()));
    }
    let engine = RolloutEngine::new(scenario)?;
    let mut reports = Vec::with_capacity(policies.len());
    for (j, policy) in policies.iter().enumerate() {
        let env_stream = if config.common_random_numbers {
            *stream
        } else {
            stream.derived(INDEPENDENT_ENV_SALT + j as u64)
        };
        let tie_stream = stream.derived(TIE_BREAK_SALT + j as u64);
        let halted = AtomicBool::new(false);
        let outcomes: Vec<Option<RolloutOutcome>> = (0..config.iterations)
            .into_par_iter()
            .map(|i| {
                if halted.load(Ordering::Relaxed) {
                    return None;
                }
                let mut env_rng = env_stream.rng(config.instance_id, i as u64);
                let mut tie_rng = tie_stream.rng(config.instance_id, i as u64);
                let outcome =
                    engine.rollout(policy, &mut env_rng, &mut tie_rng, config.per_rollout_timeout);
                if outcome.timed_out {
                    halted.store(true, Ordering::Relaxed);
                }
                Some(outcome)
            })
            .collect();
        reports.push(summarize(policy.name(), scenario.num_robots(), &outcomes));
    }
    Ok(reports)
}

/// Wall-clock profile of one policy on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub policy: String,
    /// One-time construction cost: index tables, value tables, or nothing,
    /// depending on the policy.
    pub precompute_seconds: f64,
    pub per_decision_seconds: f64,
    pub decisions: usize,
    /// Where the numbers were measured; latency comparisons only make
    /// sense within one machine string.
    pub machine: String,
}

fn machine_description() -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{}-{}, {} cores", std::env::consts::OS, std::env::consts::ARCH, cores)
}

fn random_joint_state<R: Rng>(scenario: &JointScenario, rng: &mut R) -> JointState {
    JointState {
        per_robot: scenario
            .robots
            .iter()
            .map(|robot| {
                let index = rng.gen_range(0..robot.num_states());
                OperatingState::from_canonical_index(index, robot.num_tasks())
            })
            .collect(),
    }
}

/// Measure decision latency for each policy kind on `scenario`.
///
/// Precompute is timed around policy construction. Decide latency is the
/// single-threaded wall-clock mean over at least `min_decisions` calls on
/// a fixed pool of random joint states, after discarding warmup calls so
/// lazy initialization and cache effects stay out of the figure.
pub fn benchmark_decision_time(
    scenario: &JointScenario,
    kinds: &[PolicyKind],
    stream: &RandomStream,
    min_decisions: usize,
) -> Result<Vec<BenchmarkReport>> {
    if min_decisions == 0 {
        return Err(Error::InvalidScenario("benchmark needs at least one decision".into()));
    }
    scenario.require_valid()?;
    let machine = machine_description();
    let mut state_rng = stream.derived(BENCHMARK_SALT).rng(0, 0);
    let pool: Vec<JointState> = (0..BENCHMARK_STATE_POOL)
        .map(|_| random_joint_state(scenario, &mut state_rng))
        .collect();
    let mut reports = Vec::with_capacity(kinds.len());
    for (j, &kind) in kinds.iter().enumerate() {
        let mut tie_rng = stream.derived(TIE_BREAK_SALT + j as u64).rng(0, 0);
        let before = Instant::now();
        let policy = kind.build(scenario)?;
        let precompute_seconds = before.elapsed().as_secs_f64();
        for i in 0..BENCHMARK_WARMUP {
            std::hint::black_box(policy.decide(&pool[i % pool.len()], &mut tie_rng));
        }
        let begun = Instant::now();
        let mut touched = 0usize;
        for i in 0..min_decisions {
            touched += std::hint::black_box(policy.decide(&pool[i % pool.len()], &mut tie_rng))
                .active_count();
        }
        let elapsed = begun.elapsed().as_secs_f64();
        std::hint::black_box(touched);
        reports.push(BenchmarkReport {
            policy: kind.name().to_string(),
            precompute_seconds,
            per_decision_seconds: elapsed / min_decisions as f64,
            decisions: min_decisions,
            machine: machine.clone(),
        });
    }
    Ok(reports)
}
