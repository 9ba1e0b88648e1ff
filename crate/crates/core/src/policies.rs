//! Operator-allocation policies over the joint fleet state.
//!
//! Five ways to pick which robots get an operator this step:
//!
//! * `WhittlePolicy` ranks robots by precomputed Whittle indices and takes
//!   the top positive ones, ties broken uniformly at random.
//! * `OptimalJointPolicy` solves the exact product MDP by value iteration
//!   and reads decisions from the converged table. Exponential in the
//!   fleet size; refuses above a state-count cap.
//! * `ReactivePolicy` assists faulted robots, sampling a random subset
//!   when more robots are faulted than there are operators.
//! * `MyopicPolicy` minimizes an l-step look-ahead cost (l = 1 or 2) that
//!   terminates in the all-passive continuation value.
//! * `BenefitPolicy` activates the robots whose zero-penalty benefit of
//!   activation is most negative.
//!
//! Every decide call returns a feasible allocation: at most `operators`
//! robots selected and never a robot already at its goal.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Action, JointScenario, OperatingState};
use crate::solver::{
    evaluate_policy, whittle_indices_adaptive_greedy, ArmDynamics, ArmPolicy, IndexTable,
    PenalizedArm,
};
use crate::{Error, Result};

/// Joint value iteration refuses product state spaces above this size.
pub const DEFAULT_JOINT_STATE_CAP: usize = 1_000_000;

/// Joint value iteration sweep cap; hitting it signals a bug.
const JOINT_SWEEP_CAP: usize = 10_000;

/// Accuracy of the joint value table: iteration stops when one more sweep
/// changes no entry by more than `epsilon*(1-gamma)/(2*gamma)`, which
/// bounds the sup-norm value error by `epsilon`.
const JOINT_VALUE_EPSILON: f64 = 1e-9;

/// One observed state per robot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointState {
    pub per_robot: Vec<OperatingState>,
}

impl JointState {
    /// Every robot at the start of its first task.
    pub fn initial(num_robots: usize) -> Self {
        JointState { per_robot: vec![OperatingState::Task { n: 1, fault: false }; num_robots] }
    }

    pub fn all_goal(&self) -> bool {
        self.per_robot.iter().all(|s| s.is_goal())
    }
}

/// A binary teleoperation assignment, one entry per robot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub a: Vec<u8>,
}

impl Allocation {
    pub fn none(num_robots: usize) -> Self {
        Allocation { a: vec![0; num_robots] }
    }

    pub fn active_count(&self) -> usize {
        self.a.iter().filter(|&&a| a == 1).count()
    }

    pub fn action(&self, robot: usize) -> Action {
        if self.a[robot] == 1 {
            Action::Active
        } else {
            Action::Passive
        }
    }

    /// At most `operators` active entries and no active entry on a robot
    /// already at its goal.
    pub fn is_feasible(&self, state: &JointState, operators: usize) -> bool {
        self.a.len() == state.per_robot.len()
            && self.active_count() <= operators
            && self.a.iter().zip(&state.per_robot).all(|(&a, s)| a == 0 || !s.is_goal())
    }

    fn from_active_robots(num_robots: usize, active: &[usize]) -> Self {
        let mut a = vec![0u8; num_robots];
        for &k in active {
            a[k] = 1;
        }
        Allocation { a }
    }
}

/// All binary vectors of length `num_robots` with at most `operators`
/// ones, in ascending lexicographic order (the zero allocation first).
pub(crate) fn feasible_allocations(num_robots: usize, operators: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut current = vec![0u8; num_robots];
    fn descend(current: &mut Vec<u8>, k: usize, budget: usize, out: &mut Vec<Vec<u8>>) {
        if k == current.len() {
            out.push(current.clone());
            return;
        }
        current[k] = 0;
        descend(current, k + 1, budget, out);
        if budget > 0 {
            current[k] = 1;
            descend(current, k + 1, budget - 1, out);
            current[k] = 0;
        }
    }
    descend(&mut current, 0, operators, &mut out);
    out
}

/// Whittle index policy: activate up to `operators` robots with strictly
/// positive current-state indices, highest first.
#[derive(Debug, Clone)]
pub struct WhittlePolicy {
    operators: usize,
    num_tasks: Vec<usize>,
    tables: Vec<IndexTable>,
}

impl WhittlePolicy {
    /// Compute the per-robot index tables and wrap them as a policy.
    pub fn new(scenario: &JointScenario) -> Result<Self> {
        scenario.require_valid()?;
        let tables = scenario
            .robots
            .iter()
            .map(|robot| whittle_indices_adaptive_greedy(robot, scenario.gamma))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tables(tables, scenario.operators)
    }

    /// Wrap precomputed tables (e.g. loaded from a solve artifact). Each
    /// table's length fixes the task count of its robot.
    pub fn from_tables(tables: Vec<IndexTable>, operators: usize) -> Result<Self> {
        let mut num_tasks = Vec::with_capacity(tables.len());
        for (k, table) in tables.iter().enumerate() {
            let len = table.w_by_state.len();
            if len < 3 || len % 2 == 0 {
                return Err(Error::InvalidScenario(format!(
                    "index table for robot {k} has {len} entries, expected an odd count of at least 3"
                )));
            }
            num_tasks.push((len - 1) / 2);
        }
        Ok(WhittlePolicy { operators, num_tasks, tables })
    }

    pub fn tables(&self) -> &[IndexTable] {
        &self.tables
    }

    pub fn decide<R: Rng>(&self, state: &JointState, rng: &mut R) -> Allocation {
        assert_eq!(state.per_robot.len(), self.tables.len(), "one table per robot");
        whittle_decide_from_tables(&self.tables, &self.num_tasks, state, self.operators, rng)
    }
}

fn whittle_decide_from_tables<R: Rng>(
    tables: &[IndexTable],
    num_tasks: &[usize],
    state: &JointState,
    operators: usize,
    rng: &mut R,
) -> Allocation {
    let k = state.per_robot.len();
    let mut scored: Vec<(f64, usize)> = (0..k)
        .filter_map(|robot| {
            let w = tables[robot].w_by_state[state.per_robot[robot].canonical_index(num_tasks[robot])];
            (w > 0.0).then_some((w, robot))
        })
        .collect();
    if scored.len() <= operators {
        let active: Vec<usize> = scored.iter().map(|&(_, robot)| robot).collect();
        return Allocation::from_active_robots(k, &active);
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("indices are finite").then(a.1.cmp(&b.1)));

    // Everything above the cutoff index value is in; the robots sitting
    // exactly on the cutoff draw lots for the remaining slots.
    let cutoff = scored[operators - 1].0;
    let mut active: Vec<usize> =
        scored.iter().take_while(|&&(w, _)| w > cutoff).map(|&(_, robot)| robot).collect();
    let boundary: Vec<usize> =
        scored.iter().filter(|&&(w, _)| w == cutoff).map(|&(_, robot)| robot).collect();
    let need = operators - active.len();
    active.extend(boundary.choose_multiple(rng, need).copied());
    Allocation::from_active_robots(k, &active)
}

/// Free-function form of the Whittle decision for callers holding raw
/// tables; task counts are recovered from the table lengths.
pub fn whittle_policy_decide<R: Rng>(
    tables: &[IndexTable],
    state: &JointState,
    operators: usize,
    rng: &mut R,
) -> Allocation {
    assert_eq!(state.per_robot.len(), tables.len(), "one table per robot");
    let num_tasks: Vec<usize> = tables.iter().map(|t| (t.w_by_state.len() - 1) / 2).collect();
    whittle_decide_from_tables(tables, &num_tasks, state, operators, rng)
}

/// Assist faulted robots; sample a uniform subset when the faults exceed
/// the operator budget.
#[derive(Debug, Clone)]
pub struct ReactivePolicy {
    operators: usize,
}

impl ReactivePolicy {
    pub fn new(operators: usize) -> Self {
        ReactivePolicy { operators }
    }

    pub fn decide<R: Rng>(&self, state: &JointState, rng: &mut R) -> Allocation {
        reactive_decide(state, self.operators, rng)
    }
}

pub fn reactive_decide<R: Rng>(state: &JointState, operators: usize, rng: &mut R) -> Allocation {
    let faulted: Vec<usize> = (0..state.per_robot.len())
        .filter(|&robot| state.per_robot[robot].is_fault())
        .collect();
    let active: Vec<usize> = if faulted.len() <= operators {
        faulted
    } else {
        faulted.choose_multiple(rng, operators).copied().collect()
    };
    Allocation::from_active_robots(state.per_robot.len(), &active)
}

/// Per-robot tables the look-ahead policies read at decision time.
#[derive(Debug, Clone)]
struct RobotLookahead {
    num_tasks: usize,
    /// Unpenalized step cost per (state, action).
    cost: Vec<[f64; 2]>,
    /// Canonical successors with probabilities per (state, action).
    succ: Vec<[Vec<(usize, f64)>; 2]>,
    /// One step cost plus the discounted all-passive continuation:
    /// `C(x,a) + gamma * E[V0(x')]`.
    step_value: Vec<[f64; 2]>,
    /// `step_value[x][1] - step_value[x][0]`; negative when activating
    /// this robot lowers the one-step look-ahead.
    step_delta: Vec<f64>,
}

impl RobotLookahead {
    fn new(robot: &crate::model::RobotModel, gamma: f64) -> Result<Self> {
        let dynamics = ArmDynamics::new(robot)?;
        let passive_values =
            evaluate_policy(robot, &ArmPolicy::all_passive(dynamics.num_states), gamma)?.cost;
        let mut step_value = Vec::with_capacity(dynamics.num_states);
        let mut step_delta = Vec::with_capacity(dynamics.num_states);
        for x in 0..dynamics.num_states {
            let mut per_action = [0.0; 2];
            for (a, value) in per_action.iter_mut().enumerate() {
                let continuation: f64 =
                    dynamics.succ[x][a].iter().map(|&(s, p)| p * passive_values[s]).sum();
                *value = dynamics.cost[x][a] + gamma * continuation;
            }
            step_delta.push(per_action[1] - per_action[0]);
            step_value.push(per_action);
        }
        Ok(RobotLookahead {
            num_tasks: robot.num_tasks(),
            cost: dynamics.cost,
            succ: dynamics.succ,
            step_value,
            step_delta,
        })
    }
}

/// l-step look-ahead policy, l = 1 or 2: minimizes the cost of the next l
/// decisions assuming everything after runs all-passive.
#[derive(Debug, Clone)]
pub struct MyopicPolicy {
    lookahead: usize,
    operators: usize,
    gamma: f64,
    robots: Vec<RobotLookahead>,
    allocations: Vec<Vec<u8>>,
}

impl MyopicPolicy {
    pub fn new(scenario: &JointScenario, lookahead: usize) -> Result<Self> {
        assert!(lookahead == 1 || lookahead == 2, "look-ahead depth must be 1 or 2");
        scenario.require_valid()?;
        let robots = scenario
            .robots
            .iter()
            .map(|robot| RobotLookahead::new(robot, scenario.gamma))
            .collect::<Result<Vec<_>>>()?;
        Ok(MyopicPolicy {
            lookahead,
            operators: scenario.operators,
            gamma: scenario.gamma,
            robots,
            allocations: feasible_allocations(scenario.robots.len(), scenario.operators),
        })
    }

    pub fn lookahead(&self) -> usize {
        self.lookahead
    }

    pub fn decide(&self, state: &JointState) -> Allocation {
        let states: Vec<usize> = state
            .per_robot
            .iter()
            .zip(&self.robots)
            .map(|(s, robot)| s.canonical_index(robot.num_tasks))
            .collect();

        let mut best = f64::INFINITY;
        let mut best_allocation: &[u8] = &self.allocations[0];
        for allocation in &self.allocations {
            let activates_goal = allocation
                .iter()
                .zip(&state.per_robot)
                .any(|(&a, s)| a == 1 && s.is_goal());
            if activates_goal {
                continue;
            }
            let g = match self.lookahead {
                1 => self.one_step_cost(&states, allocation),
                _ => self.two_step_cost(&states, allocation),
            };
            // Strict improvement keeps the first (lexicographically
            // smallest) minimizer.
            if g < best {
                best = g;
                best_allocation = allocation;
            }
        }
        Allocation { a: best_allocation.to_vec() }
    }

    fn one_step_cost(&self, states: &[usize], allocation: &[u8]) -> f64 {
        states
            .iter()
            .zip(allocation)
            .zip(&self.robots)
            .map(|((&x, &a), robot)| robot.step_value[x][a as usize])
            .sum()
    }

    fn two_step_cost(&self, states: &[usize], allocation: &[u8]) -> f64 {
        let mut expected_inner = 0.0;
        let sweep = LookaheadSweep {
            robots: &self.robots,
            states,
            allocation,
            operators: self.operators,
        };
        let mut deltas = Vec::with_capacity(states.len());
        sweep.accumulate(0, 1.0, 0.0, &mut deltas, &mut expected_inner);
        let immediate: f64 = states
            .iter()
            .zip(allocation)
            .zip(&self.robots)
            .map(|((&x, &a), robot)| robot.cost[x][a as usize])
            .sum();
        immediate + self.gamma * expected_inner
    }
}

/// Walk of the product successor distribution of `(states, allocation)`;
/// at each joint successor adds `prob * min_a' g(x', a', 1)`, using the
/// separability of the one-step cost: the best inner allocation takes the
/// most negative step deltas, at most `operators` of them.
struct LookaheadSweep<'a> {
    robots: &'a [RobotLookahead],
    states: &'a [usize],
    allocation: &'a [u8],
    operators: usize,
}

impl LookaheadSweep<'_> {
    fn accumulate(
        &self,
        robot: usize,
        prob: f64,
        passive_sum: f64,
        deltas: &mut Vec<f64>,
        acc: &mut f64,
    ) {
        if robot == self.states.len() {
            *acc += prob * (passive_sum + top_negative_sum(deltas, self.operators));
            return;
        }
        let table = &self.robots[robot];
        for &(succ, p) in &table.succ[self.states[robot]][self.allocation[robot] as usize] {
            deltas.push(table.step_delta[succ]);
            self.accumulate(
                robot + 1,
                prob * p,
                passive_sum + table.step_value[succ][0],
                deltas,
                acc,
            );
            deltas.pop();
        }
    }
}

/// Sum of the `limit` most negative strictly negative entries.
fn top_negative_sum(deltas: &[f64], limit: usize) -> f64 {
    debug_assert!(deltas.len() <= 64, "selection mask is a u64");
    let mut picked = 0u64;
    let mut total = 0.0;
    for _ in 0..limit {
        let mut best = 0.0;
        let mut best_index = None;
        for (i, &d) in deltas.iter().enumerate() {
            if picked & (1 << i) == 0 && d < best {
                best = d;
                best_index = Some(i);
            }
        }
        match best_index {
            Some(i) => {
                picked |= 1 << i;
                total += best;
            }
            None => break,
        }
    }
    total
}

/// Convenience wrapper that rebuilds the look-ahead tables per call; use
/// [`MyopicPolicy`] directly when deciding repeatedly.
pub fn myopic_decide(
    scenario: &JointScenario,
    state: &JointState,
    lookahead: usize,
) -> Result<Allocation> {
    Ok(MyopicPolicy::new(scenario, lookahead)?.decide(state))
}

/// Activate the robots whose zero-penalty activation benefit is most
/// negative; robots with non-negative benefit are never activated.
#[derive(Debug, Clone)]
pub struct BenefitPolicy {
    operators: usize,
    tables: Vec<Vec<f64>>,
}

impl BenefitPolicy {
    pub fn new(scenario: &JointScenario) -> Result<Self> {
        scenario.require_valid()?;
        let mut tables = Vec::with_capacity(scenario.robots.len());
        for robot in &scenario.robots {
            let arm = PenalizedArm::new(robot, scenario.gamma)?;
            let (values, _) = arm.solve(0.0, None)?;
            tables.push(arm.benefits(0.0, &values));
        }
        Ok(BenefitPolicy { operators: scenario.operators, tables })
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    pub fn decide(&self, state: &JointState) -> Allocation {
        benefit_decide(&self.tables, state, self.operators)
    }
}

/// Greedy form of the benefit argmin: most negative benefits first, ties
/// to the lower robot index, never more than `operators` and never a
/// non-negative benefit.
pub fn benefit_decide(
    b0_tables: &[Vec<f64>],
    state: &JointState,
    operators: usize,
) -> Allocation {
    assert_eq!(state.per_robot.len(), b0_tables.len(), "one table per robot");
    let mut scored: Vec<(f64, usize)> = (0..state.per_robot.len())
        .filter_map(|robot| {
            let table = &b0_tables[robot];
            let num_tasks = (table.len() - 1) / 2;
            let b = table[state.per_robot[robot].canonical_index(num_tasks)];
            (b < 0.0).then_some((b, robot))
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("benefits are finite").then(a.1.cmp(&b.1)));
    let active: Vec<usize> =
        scored.iter().take(operators).map(|&(_, robot)| robot).collect();
    Allocation::from_active_robots(state.per_robot.len(), &active)
}

/// Exact solution of the joint operator-allocation MDP by value iteration
/// over the product state space.
///
/// The sweep is Gauss-Seidel in descending task-progress order: task
/// indices never decrease, so a state's successors either sit in earlier
/// sweep positions (already updated this sweep) or differ only by fault
/// flags (handled by iterating). Joint self-loops are eliminated
/// analytically, which keeps fault-heavy states from slowing convergence.
#[derive(Debug, Clone)]
pub struct OptimalJointPolicy {
    num_tasks: Vec<usize>,
    strides: Vec<usize>,
    /// Converged joint value per product-state index.
    values: Vec<f64>,
    /// Index into `allocations` per product-state index.
    action_table: Vec<u32>,
    allocations: Vec<Vec<u8>>,
    sweeps: usize,
}

/// Per-robot tables with successors premultiplied by the robot's stride,
/// so a joint successor index is a plain sum.
struct StridedArm {
    cost: Vec<[f64; 2]>,
    /// `(successor * stride, probability)` per (state, action).
    succ: Vec<[Vec<(usize, f64)>; 2]>,
    /// Probability of staying exactly put per (state, action).
    self_prob: Vec<[f64; 2]>,
}

/// Depth-first enumeration of a joint state's successors under one fixed
/// allocation, accumulating probability-weighted values.
struct JointWalk<'a> {
    states: &'a [u16],
    allocation: &'a [u8],
    arms: &'a [StridedArm],
    values: &'a [f64],
}

impl JointWalk<'_> {
    fn accumulate(&self, robot: usize, offset: usize, prob: f64, acc: &mut f64) {
        if robot == self.states.len() {
            *acc += prob * self.values[offset];
            return;
        }
        for &(succ_offset, p) in
            &self.arms[robot].succ[self.states[robot] as usize][self.allocation[robot] as usize]
        {
            self.accumulate(robot + 1, offset + succ_offset, prob * p, acc);
        }
    }
}

impl OptimalJointPolicy {
    pub fn new(scenario: &JointScenario) -> Result<Self> {
        Self::with_cap(scenario, DEFAULT_JOINT_STATE_CAP)
    }

    pub fn with_cap(scenario: &JointScenario, cap: usize) -> Result<Self> {
        scenario.require_valid()?;
        let size = scenario.joint_state_count();
        if size > cap {
            return Err(Error::JointSpaceTooLarge { size, cap });
        }
        let gamma = scenario.gamma;
        let num_robots = scenario.num_robots();

        let mut strides = Vec::with_capacity(num_robots);
        let mut radices = Vec::with_capacity(num_robots);
        let mut stride = 1usize;
        for robot in &scenario.robots {
            strides.push(stride);
            radices.push(robot.num_states());
            stride *= robot.num_states();
        }

        let arms: Vec<StridedArm> = scenario
            .robots
            .iter()
            .zip(&strides)
            .map(|(robot, &stride)| {
                let dynamics = ArmDynamics::new(robot)?;
                let mut succ = Vec::with_capacity(dynamics.num_states);
                let mut self_prob = Vec::with_capacity(dynamics.num_states);
                for x in 0..dynamics.num_states {
                    let mut per_action: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
                    let mut stay = [0.0; 2];
                    for a in 0..2 {
                        per_action[a] = dynamics.succ[x][a]
                            .iter()
                            .map(|&(s, p)| (s * stride, p))
                            .collect();
                        stay[a] = dynamics.succ[x][a]
                            .iter()
                            .find(|&&(s, _)| s == x)
                            .map_or(0.0, |&(_, p)| p);
                    }
                    succ.push(per_action);
                    self_prob.push(stay);
                }
                Ok(StridedArm { cost: dynamics.cost, succ, self_prob })
            })
            .collect::<Result<Vec<_>>>()?;

        // Decode every joint index once; the sweep visits states in
        // descending total task progress (goal states count one past the
        // last task, conveniently `x/2 + 1` in canonical coordinates).
        let mut decoded = vec![0u16; size * num_robots];
        let mut progress = vec![0u32; size];
        for xi in 0..size {
            let mut rest = xi;
            let mut total = 0u32;
            for k in 0..num_robots {
                let x = rest % radices[k];
                rest /= radices[k];
                decoded[xi * num_robots + k] = x as u16;
                total += (x / 2 + 1) as u32;
            }
            progress[xi] = total;
        }
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| progress[b].cmp(&progress[a]).then(a.cmp(&b)));

        let allocations = feasible_allocations(num_robots, scenario.operators);
        let goal_codes: Vec<u16> = radices.iter().map(|&r| (r - 1) as u16).collect();

        let threshold = JOINT_VALUE_EPSILON * (1.0 - gamma) / (2.0 * gamma);
        let mut values = vec![0.0f64; size];
        let mut sweeps = 0usize;
        loop {
            let mut largest_change = 0.0f64;
            for &xi in &order {
                let states = &decoded[xi * num_robots..(xi + 1) * num_robots];
                let updated = Self::best_value(
                    states,
                    &allocations,
                    &goal_codes,
                    &arms,
                    gamma,
                    &values,
                    xi,
                )
                .0;
                largest_change = largest_change.max((updated - values[xi]).abs());
                values[xi] = updated;
            }
            sweeps += 1;
            if largest_change <= threshold {
                break;
            }
            if sweeps >= JOINT_SWEEP_CAP {
                return Err(Error::NoConvergence(JOINT_SWEEP_CAP));
            }
        }

        let mut action_table = vec![0u32; size];
        for xi in 0..size {
            let states = &decoded[xi * num_robots..(xi + 1) * num_robots];
            action_table[xi] =
                Self::best_value(states, &allocations, &goal_codes, &arms, gamma, &values, xi).1;
        }

        Ok(OptimalJointPolicy {
            num_tasks: scenario.robots.iter().map(|r| r.num_tasks()).collect(),
            strides,
            values,
            action_table,
            allocations,
            sweeps,
        })
    }

    /// Minimal Q-value over feasible allocations at one joint state, with
    /// the joint self-loop folded out:
    /// `Q = (C + gamma*(S - p_self*V(x))) / (1 - gamma*p_self)`.
    /// Returns the value and the first (lexicographically smallest)
    /// minimizing allocation.
    fn best_value(
        states: &[u16],
        allocations: &[Vec<u8>],
        goal_codes: &[u16],
        arms: &[StridedArm],
        gamma: f64,
        values: &[f64],
        xi: usize,
    ) -> (f64, u32) {
        let mut best = f64::INFINITY;
        let mut best_id = 0u32;
        for (aid, allocation) in allocations.iter().enumerate() {
            let activates_goal = allocation
                .iter()
                .zip(states)
                .zip(goal_codes)
                .any(|((&a, &x), &goal)| a == 1 && x == goal);
            if activates_goal {
                continue;
            }
            let mut cost = 0.0;
            let mut self_prob = 1.0;
            for ((&x, &a), arm) in states.iter().zip(allocation).zip(arms) {
                cost += arm.cost[x as usize][a as usize];
                self_prob *= arm.self_prob[x as usize][a as usize];
            }
            let mut successor_sum = 0.0;
            let walk = JointWalk { states, allocation, arms, values };
            walk.accumulate(0, 0, 1.0, &mut successor_sum);
            let q = if self_prob < 1.0 {
                (cost + gamma * (successor_sum - self_prob * values[xi]))
                    / (1.0 - gamma * self_prob)
            } else {
                cost / (1.0 - gamma)
            };
            if q < best {
                best = q;
                best_id = aid as u32;
            }
        }
        (best, best_id)
    }

    fn joint_index(&self, state: &JointState) -> usize {
        state
            .per_robot
            .iter()
            .zip(&self.num_tasks)
            .zip(&self.strides)
            .map(|((s, &n), &stride)| s.canonical_index(n) * stride)
            .sum()
    }

    /// Converged expected discounted cost from `state`.
    pub fn value(&self, state: &JointState) -> f64 {
        self.values[self.joint_index(state)]
    }

    /// Number of Gauss-Seidel sweeps the solve took.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn decide(&self, state: &JointState) -> Allocation {
        let aid = self.action_table[self.joint_index(state)] as usize;
        Allocation { a: self.allocations[aid].clone() }
    }
}

/// Any of the five allocation policies behind one decide interface. The
/// deterministic policies ignore the RNG handle.
#[derive(Debug, Clone)]
pub enum Policy {
    Whittle(WhittlePolicy),
    Optimal(OptimalJointPolicy),
    Reactive(ReactivePolicy),
    Myopic(MyopicPolicy),
    Benefit(BenefitPolicy),
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::Whittle(_) => "whittle".into(),
            Policy::Optimal(_) => "optimal".into(),
            Policy::Reactive(_) => "reactive".into(),
            Policy::Myopic(p) => format!("myopic{}", p.lookahead()),
            Policy::Benefit(_) => "benefit".into(),
        }
    }

    pub fn decide<R: Rng>(&self, state: &JointState, rng: &mut R) -> Allocation {
        match self {
            Policy::Whittle(p) => p.decide(state, rng),
            Policy::Optimal(p) => p.decide(state),
            Policy::Reactive(p) => p.decide(state, rng),
            Policy::Myopic(p) => p.decide(state),
            Policy::Benefit(p) => p.decide(state),
        }
    }
}

/// A policy family named before construction. This is the vocabulary the
/// command line and the benchmark harness share: parse a name, then build
/// the policy against a concrete scenario (which is where precompute cost
/// is paid).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Whittle,
    Optimal,
    Reactive,
    Myopic1,
    Myopic2,
    Benefit,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Whittle,
        PolicyKind::Optimal,
        PolicyKind::Reactive,
        PolicyKind::Myopic1,
        PolicyKind::Myopic2,
        PolicyKind::Benefit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Whittle => "whittle",
            PolicyKind::Optimal => "optimal",
            PolicyKind::Reactive => "reactive",
            PolicyKind::Myopic1 => "myopic1",
            PolicyKind::Myopic2 => "myopic2",
            PolicyKind::Benefit => "benefit",
        }
    }

    pub fn build(self, scenario: &JointScenario) -> Result<Policy> {
        Ok(match self {
            PolicyKind::Whittle => Policy::Whittle(WhittlePolicy::new(scenario)?),
            PolicyKind::Optimal => Policy::Optimal(OptimalJointPolicy::new(scenario)?),
            PolicyKind::Reactive => Policy::Reactive(ReactivePolicy::new(scenario.operators)),
            PolicyKind::Myopic1 => Policy::Myopic(MyopicPolicy::new(scenario, 1)?),
            PolicyKind::Myopic2 => Policy::Myopic(MyopicPolicy::new(scenario, 2)?),
            PolicyKind::Benefit => Policy::Benefit(BenefitPolicy::new(scenario)?),
        })
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidScenario(format!(
                    "unknown policy \"{s}\" (expected one of: {})",
                    known.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
