//! The single-robot controlled Markov chain and the joint multi-robot
//! scenario.
//!
//! A robot works through tasks `1..=N` in order. At task `n` it is either in
//! the normal state `(n,0)` or the fault state `(n,1)`; completing task `N`
//! lands it in the absorbing, zero-cost `Goal` state. Under autonomous
//! operation a faulted robot stays faulted forever; only teleoperation can
//! move it. Transition probabilities are stored as success/fault-toggle
//! pairs per operating mode, and the stay probability is always derived as
//! the residual so the three can never drift out of consistency.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Slack used when checking that probability pairs sum to at most one, so
/// that values produced by floating-point subtraction do not trip spurious
/// violations.
const ROW_SUM_SLACK: f64 = 1e-12;

/// Operating mode of one robot for one time step: passive means the robot
/// runs autonomously, active means a human operator teleoperates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Passive,
    Active,
}

impl Action {
    /// Both actions in a fixed order, passive first.
    pub const ALL: [Action; 2] = [Action::Passive, Action::Active];

    /// 0 for passive, 1 for active; used to index per-action tables.
    pub fn index(self) -> usize {
        match self {
            Action::Passive => 0,
            Action::Active => 1,
        }
    }
}

/// One robot's position in its task sequence: working on task `n` (1-based)
/// in the normal or fault internal state, or done at the absorbing `Goal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatingState {
    /// Working on task `n`; `fault` marks the internal state that blocks
    /// autonomous progress.
    Task { n: usize, fault: bool },
    /// All tasks completed. Absorbing and free under both actions.
    Goal,
}

impl OperatingState {
    pub fn is_goal(self) -> bool {
        matches!(self, OperatingState::Goal)
    }

    pub fn is_fault(self) -> bool {
        matches!(self, OperatingState::Task { fault: true, .. })
    }

    /// Position in the canonical enumeration
    /// `(1,0), (1,1), (2,0), …, (N,1), Goal` for a robot with `num_tasks`
    /// tasks. Every matrix, index table, and file format in the toolkit is
    /// keyed by this order.
    pub fn canonical_index(self, num_tasks: usize) -> usize {
        match self {
            OperatingState::Task { n, fault } => 2 * (n - 1) + usize::from(fault),
            OperatingState::Goal => 2 * num_tasks,
        }
    }

    /// Inverse of [`canonical_index`](Self::canonical_index).
    ///
    /// Panics if `index > 2 * num_tasks`.
    pub fn from_canonical_index(index: usize, num_tasks: usize) -> OperatingState {
        assert!(
            index <= 2 * num_tasks,
            "state index {index} out of range for {num_tasks} tasks"
        );
        if index == 2 * num_tasks {
            OperatingState::Goal
        } else {
            OperatingState::Task {
                n: index / 2 + 1,
                fault: index % 2 == 1,
            }
        }
    }
}

impl std::fmt::Display for OperatingState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OperatingState::Task { n, fault } => write!(f, "({n},{})", u8::from(*fault)),
            OperatingState::Goal => write!(f, "Goal"),
        }
    }
}

/// Transition probabilities for one task under both operating modes.
///
/// Fields follow the `p`/`q` naming of the transition diagram: `p` is the
/// probability of completing the task this step, `q` the probability of
/// toggling the internal fault flag. The stay probabilities
/// `r = 1 - p - q` are derived, never stored. Autonomous operation in the
/// fault state is structural: the robot stays put, so no mode-0 fault
/// probabilities exist to store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTransition {
    /// Success probability, autonomous from normal.
    pub p0: f64,
    /// Normal-to-fault probability, autonomous.
    pub q0: f64,
    /// Success probability, teleoperated from normal.
    pub p1n0: f64,
    /// Normal-to-fault probability, teleoperated.
    pub q1n0: f64,
    /// Success probability, teleoperated from fault.
    pub p1n1: f64,
    /// Fault-to-normal recovery probability, teleoperated.
    pub q1n1: f64,
}

impl TaskTransition {
    /// Stay probability, autonomous from normal.
    pub fn r0(&self) -> f64 {
        1.0 - self.p0 - self.q0
    }

    /// Stay probability, teleoperated from normal.
    pub fn r1n0(&self) -> f64 {
        1.0 - self.p1n0 - self.q1n0
    }

    /// Stay probability, teleoperated from fault.
    pub fn r1n1(&self) -> f64 {
        1.0 - self.p1n1 - self.q1n1
    }

    /// Faults-with-continuation shape: teleoperation never faults the robot
    /// and works the task from the fault state exactly as from normal.
    pub fn is_continuation_shape(&self) -> bool {
        self.q1n0 == 0.0 && self.q1n1 == 0.0 && self.p1n1 == self.p1n0
    }

    /// Faults-with-reset shape: teleoperation never faults the robot, and
    /// from a fault it can only restore the normal state, not complete the
    /// task directly.
    pub fn is_reset_shape(&self) -> bool {
        self.q1n0 == 0.0 && self.p1n1 == 0.0
    }
}

/// Per-step costs for one task. The fault cost is typically larger than the
/// normal cost since a faulted robot burns time without progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskCost {
    /// Cost per step in the normal state.
    pub rho: f64,
    /// Cost per step in the fault state.
    pub phi: f64,
}

/// One robot: its task sequence with transition probabilities, per-task
/// costs, and the teleoperation surcharge added to every active step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub tasks: Vec<TaskTransition>,
    pub costs: Vec<TaskCost>,
    /// Extra per-step cost whenever an operator is allocated, on top of the
    /// state cost. Models the operator's time.
    pub teleop_surcharge: f64,
}

/// A structural problem found by [`RobotModel::validate`]. Violations are
/// data, not errors: validation always returns the complete list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModelViolation {
    /// The model has no tasks at all.
    Empty,
    /// `tasks` and `costs` must pair up one-to-one.
    LengthMismatch { tasks: usize, costs: usize },
    /// A probability fell outside `[0, 1]`. `field` names the offender.
    ProbabilityOutOfRange {
        task: usize,
        field: &'static str,
        value: f64,
    },
    /// A success/toggle pair exceeds 1, leaving a negative stay probability.
    RowSumExceedsOne {
        task: usize,
        pair: &'static str,
        sum: f64,
    },
    /// Teleoperation has no effect in the fault state (`p1n1 + q1n1 = 0`),
    /// so the robot could be stuck forever. Every fault state must be
    /// assistable.
    FaultUnassistable { task: usize },
    /// A cost is negative. `field` is `rho` or `phi`.
    NegativeCost {
        task: usize,
        field: &'static str,
        value: f64,
    },
    /// The teleoperation surcharge is negative.
    NegativeSurcharge { value: f64 },
}

impl std::fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelViolation::Empty => write!(f, "model has no tasks"),
            ModelViolation::LengthMismatch { tasks, costs } => {
                write!(f, "{tasks} tasks but {costs} cost entries")
            }
            ModelViolation::ProbabilityOutOfRange { task, field, value } => {
                write!(f, "{field} = {value} out of [0,1] at task {task}")
            }
            ModelViolation::RowSumExceedsOne { task, pair, sum } => {
                write!(f, "{pair} sums to {sum} > 1 at task {task}")
            }
            ModelViolation::FaultUnassistable { task } => {
                write!(f, "p1n1 + q1n1 = 0 at task {task}: fault state cannot be assisted")
            }
            ModelViolation::NegativeCost { task, field, value } => {
                write!(f, "{field} = {value} < 0 at task {task}")
            }
            ModelViolation::NegativeSurcharge { value } => {
                write!(f, "teleop surcharge {value} < 0")
            }
        }
    }
}

impl RobotModel {
    /// Number of tasks N.
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Number of operating states, `2N + 1`.
    pub fn num_states(&self) -> usize {
        2 * self.num_tasks() + 1
    }

    /// The canonical state enumeration `(1,0), (1,1), …, (N,1), Goal`.
    pub fn enumerate_states(&self) -> Vec<OperatingState> {
        let n = self.num_tasks();
        (0..self.num_states())
            .map(|i| OperatingState::from_canonical_index(i, n))
            .collect()
    }

    /// The state reached on completing task `n`: the next task's normal
    /// state, or Goal after the last task.
    fn success_state(&self, n: usize) -> OperatingState {
        if n == self.num_tasks() {
            OperatingState::Goal
        } else {
            OperatingState::Task { n: n + 1, fault: false }
        }
    }

    fn check_state(&self, state: OperatingState) -> Result<()> {
        match state {
            OperatingState::Task { n, .. } if n == 0 || n > self.num_tasks() => Err(
                Error::InvalidState(format!("{state} for a model with {} tasks", self.num_tasks())),
            ),
            _ => Ok(()),
        }
    }

    /// Support of the one-step transition distribution from `state` under
    /// `action`, as `(successor, probability)` pairs with zero-probability
    /// successors omitted. Entries are ordered success, fault-toggle, stay.
    pub fn transition_distribution(
        &self,
        state: OperatingState,
        action: Action,
    ) -> Result<Vec<(OperatingState, f64)>> {
        self.check_state(state)?;
        let (n, fault) = match state {
            OperatingState::Goal => return Ok(vec![(OperatingState::Goal, 1.0)]),
            OperatingState::Task { n, fault } => (n, fault),
        };
        // Autonomous fault behavior is structural: the robot stays put.
        if fault && action == Action::Passive {
            return Ok(vec![(state, 1.0)]);
        }
        let tr = &self.tasks[n - 1];
        let (p, q) = match (action, fault) {
            (Action::Passive, false) => (tr.p0, tr.q0),
            (Action::Active, false) => (tr.p1n0, tr.q1n0),
            (Action::Active, true) => (tr.p1n1, tr.q1n1),
            (Action::Passive, true) => unreachable!("handled above"),
        };
        let mut out = Vec::with_capacity(3);
        if p > 0.0 {
            out.push((self.success_state(n), p));
        }
        if q > 0.0 {
            out.push((OperatingState::Task { n, fault: !fault }, q));
        }
        let stay = 1.0 - p - q;
        if stay > 0.0 {
            out.push((state, stay));
        }
        Ok(out)
    }

    /// Per-step cost of taking `action` in `state`: the state's cost plus
    /// the teleoperation surcharge when active. Goal is free under both
    /// actions.
    pub fn step_cost(&self, state: OperatingState, action: Action) -> Result<f64> {
        self.check_state(state)?;
        let base = match state {
            OperatingState::Goal => return Ok(0.0),
            OperatingState::Task { n, fault: false } => self.costs[n - 1].rho,
            OperatingState::Task { n, fault: true } => self.costs[n - 1].phi,
        };
        Ok(match action {
            Action::Passive => base,
            Action::Active => base + self.teleop_surcharge,
        })
    }

    /// Largest per-step cost over all states and actions. Used to bound
    /// value scales, penalty grids, and rollout horizons.
    pub fn max_step_cost(&self) -> f64 {
        self.costs
            .iter()
            .map(|c| c.rho.max(c.phi))
            .fold(0.0, f64::max)
            + self.teleop_surcharge
    }

    /// Collect every violated structural invariant. An empty list means the
    /// model is valid.
    pub fn validate(&self) -> Vec<ModelViolation> {
        let mut v = Vec::new();
        if self.tasks.is_empty() {
            v.push(ModelViolation::Empty);
        }
        if self.tasks.len() != self.costs.len() {
            v.push(ModelViolation::LengthMismatch {
                tasks: self.tasks.len(),
                costs: self.costs.len(),
            });
        }
        for (i, tr) in self.tasks.iter().enumerate() {
            let task = i + 1;
            let fields = [
                ("p0", tr.p0),
                ("q0", tr.q0),
                ("p1n0", tr.p1n0),
                ("q1n0", tr.q1n0),
                ("p1n1", tr.p1n1),
                ("q1n1", tr.q1n1),
            ];
            for (field, value) in fields {
                if !(0.0..=1.0).contains(&value) || value.is_nan() {
                    v.push(ModelViolation::ProbabilityOutOfRange { task, field, value });
                }
            }
            let pairs = [
                ("p0 + q0", tr.p0 + tr.q0),
                ("p1n0 + q1n0", tr.p1n0 + tr.q1n0),
                ("p1n1 + q1n1", tr.p1n1 + tr.q1n1),
            ];
            for (pair, sum) in pairs {
                if sum > 1.0 + ROW_SUM_SLACK {
                    v.push(ModelViolation::RowSumExceedsOne { task, pair, sum });
                }
            }
            if tr.p1n1 + tr.q1n1 <= 0.0 {
                v.push(ModelViolation::FaultUnassistable { task });
            }
        }
        for (i, c) in self.costs.iter().enumerate() {
            let task = i + 1;
            if c.rho < 0.0 || c.rho.is_nan() {
                v.push(ModelViolation::NegativeCost { task, field: "rho", value: c.rho });
            }
            if c.phi < 0.0 || c.phi.is_nan() {
                v.push(ModelViolation::NegativeCost { task, field: "phi", value: c.phi });
            }
        }
        if self.teleop_surcharge < 0.0 || self.teleop_surcharge.is_nan() {
            v.push(ModelViolation::NegativeSurcharge { value: self.teleop_surcharge });
        }
        v
    }

    /// Like [`validate`](Self::validate) but as a `Result`, for call sites
    /// that require a valid model.
    pub fn require_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidModel(msgs.join("; ")))
        }
    }
}

/// A complete problem instance: K robots sharing M operators under a common
/// discount factor, plus the seed that makes every downstream draw
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointScenario {
    pub robots: Vec<RobotModel>,
    /// Number of operators M, `1 ≤ M ≤ K`.
    pub operators: usize,
    /// Discount factor, strictly inside `(0, 1)`.
    pub gamma: f64,
    /// Master RNG seed; all simulation randomness derives from it.
    pub seed: u64,
}

impl JointScenario {
    pub fn num_robots(&self) -> usize {
        self.robots.len()
    }

    /// Size of the joint product state space, `∏ (2·N_k + 1)`, saturating
    /// on overflow.
    pub fn joint_state_count(&self) -> usize {
        self.robots
            .iter()
            .fold(1usize, |acc, r| acc.saturating_mul(r.num_states()))
    }

    /// Largest per-step cost over all robots.
    pub fn max_step_cost(&self) -> f64 {
        self.robots.iter().map(|r| r.max_step_cost()).fold(0.0, f64::max)
    }

    /// Check scenario-level invariants and every robot model.
    pub fn require_valid(&self) -> Result<()> {
        if self.robots.is_empty() {
            return Err(Error::InvalidScenario("no robots".into()));
        }
        if self.operators == 0 || self.operators > self.robots.len() {
            return Err(Error::InvalidScenario(format!(
                "operators = {} must satisfy 1 <= M <= K = {}",
                self.operators,
                self.robots.len()
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "gamma = {} must lie strictly inside (0, 1)",
                self.gamma
            )));
        }
        for (k, robot) in self.robots.iter().enumerate() {
            robot.require_valid().map_err(|e| {
                Error::InvalidScenario(format!("robot {k}: {e}"))
            })?;
        }
        Ok(())
    }
}
