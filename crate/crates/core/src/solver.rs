//! Single-arm machinery: the penalty-modified MDP solver, exact policy
//! evaluation through dense linear solves, the adaptive greedy Whittle
//! index algorithm, and an independent bisection oracle.
//!
//! Everything here treats one robot in isolation. The activation penalty
//! `λ` is added to the per-step cost of every active action; the Whittle
//! index of a state is the smallest `λ` at which the optimal penalized
//! policy is content to leave that state passive.
//!
//! The Goal state gets no special treatment in the solves. Activating an
//! absorbing, zero-cost state buys nothing and pays the penalty, so the
//! optimizer leaves it passive at every `λ ≥ 0` and activates it only when
//! a negative penalty subsidizes doing so; Goal's index is therefore 0.
//! Keeping the subsidy case honest matters: with the Goal value held at
//! zero under subsidies, an arm whose fault loop can soak up `λ` forever
//! would look better off never finishing, and deeply subsidized sweeps
//! would report passive states that the true optimum activates.
//!
//! Solves use policy iteration with exact linear-system evaluation rather
//! than plain value iteration: the state spaces are tiny (a few dozen
//! states), each iteration is one LU factorization, and the returned
//! values are exact to machine precision instead of carrying an iteration
//! tolerance. Downstream finite-difference probes rely on that.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{Action, OperatingState, RobotModel};
use crate::{Error, Result};

/// Bellman residual the solver guarantees on returned value vectors.
/// Policy iteration lands far below this; the constant is the documented
/// contract, not the achieved accuracy.
pub const VALUE_TOLERANCE: f64 = 1e-9;

/// Two activation-count vectors are considered to differ at a state only
/// beyond this tolerance; guards the denominator of the adaptive greedy
/// price ratio.
pub const ACTIVE_COUNT_TOLERANCE: f64 = 1e-9;

/// Width at which index bisection stops.
pub const BISECTION_WIDTH: f64 = 1e-8;

/// Policy-iteration cap. A discounted arm converges in far fewer rounds;
/// hitting this signals a bug.
const POLICY_ITERATION_CAP: usize = 1_000;

/// Every Whittle index of `model` lies within `±penalty_bound`: one
/// activation costs `λ`, and the most it can ever save (or waste) is the
/// whole discounted cost stream, `C_max / (1 - γ)`, so beyond twice that
/// scale the optimal policy no longer depends on the state.
pub fn penalty_bound(model: &RobotModel, gamma: f64) -> f64 {
    2.0 * model.max_step_cost() / (1.0 - gamma)
}

/// A deterministic stationary policy for one arm, as an action per state in
/// canonical order. Constructed policies keep the Goal entry passive; a
/// penalized solve may activate it when the penalty is negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmPolicy {
    pub action_by_state: Vec<Action>,
}

impl ArmPolicy {
    /// Passive everywhere.
    pub fn all_passive(num_states: usize) -> Self {
        ArmPolicy { action_by_state: vec![Action::Passive; num_states] }
    }

    /// Passive exactly on the marked states, active everywhere else.
    pub fn from_passive_set(passive: &[bool]) -> Self {
        let action_by_state = passive
            .iter()
            .map(|&p| if p { Action::Passive } else { Action::Active })
            .collect();
        ArmPolicy { action_by_state }
    }
}

/// Exact discounted totals for a fixed policy, per start state: `D` is the
/// expected discounted cost, `N` the expected discounted number of active
/// steps. Both come from one factorization of `I - γ·T_π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    /// Expected discounted cost per start state (the `D` vector).
    pub cost: Vec<f64>,
    /// Expected discounted count of active actions per start state (the
    /// `N` vector); entries lie in `[0, 1/(1-γ)]`.
    pub active_count: Vec<f64>,
}

/// One round of the adaptive greedy algorithm: the penalty at which the
/// round's states became passive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRound {
    /// The round's penalty `λ*`.
    pub lambda_star: f64,
    /// Canonical indices of the states absorbed this round.
    pub absorbed: Vec<usize>,
}

/// Whittle indices for every state of one arm, plus the per-round log of
/// the adaptive greedy run for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTable {
    /// Index per state in canonical order; Goal's entry is 0.
    pub w_by_state: Vec<f64>,
    /// The `λ*` sequence with the states absorbed at each round.
    pub rounds: Vec<IndexRound>,
    /// Whether the `λ*` sequence was non-decreasing. A false value is the
    /// algorithm's warning that the arm did not behave indexably.
    pub monotone: bool,
}

impl IndexTable {
    /// Index of `state` for a robot with `num_tasks` tasks.
    pub fn index_of(&self, state: OperatingState, num_tasks: usize) -> f64 {
        self.w_by_state[state.canonical_index(num_tasks)]
    }
}

/// Flat per-state, per-action tables for one arm: step costs and successor
/// lists over canonical indices. Built once, shared by every solve.
pub(crate) struct ArmDynamics {
    pub num_states: usize,
    /// `cost[x][a]`, unpenalized.
    pub cost: Vec<[f64; 2]>,
    /// `succ[x][a]` as `(canonical successor, probability)` with zero
    /// entries omitted.
    pub succ: Vec<[Vec<(usize, f64)>; 2]>,
}

impl ArmDynamics {
    pub fn new(model: &RobotModel) -> Result<Self> {
        let n = model.num_tasks();
        let num_states = model.num_states();
        let mut cost = Vec::with_capacity(num_states);
        let mut succ = Vec::with_capacity(num_states);
        for idx in 0..num_states {
            let state = OperatingState::from_canonical_index(idx, n);
            let mut per_action_cost = [0.0; 2];
            let mut per_action_succ: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
            for action in Action::ALL {
                per_action_cost[action.index()] = model.step_cost(state, action)?;
                per_action_succ[action.index()] = model
                    .transition_distribution(state, action)?
                    .into_iter()
                    .map(|(s, p)| (s.canonical_index(n), p))
                    .collect();
            }
            cost.push(per_action_cost);
            succ.push(per_action_succ);
        }
        Ok(ArmDynamics { num_states, cost, succ })
    }

    /// Expected value of `values` over the successor distribution of
    /// `(state, action)`.
    fn successor_value(&self, state: usize, action: usize, values: &[f64]) -> f64 {
        self.succ[state][action]
            .iter()
            .map(|&(s, p)| p * values[s])
            .sum()
    }
}

/// The λ-penalized single-arm problem with its dynamics tables, ready for
/// repeated solves at different penalties.
pub(crate) struct PenalizedArm {
    pub dynamics: ArmDynamics,
    pub gamma: f64,
}

impl PenalizedArm {
    pub fn new(model: &RobotModel, gamma: f64) -> Result<Self> {
        model.require_valid()?;
        Ok(PenalizedArm { dynamics: ArmDynamics::new(model)?, gamma })
    }

    /// Exact value vector of a fixed policy under penalty `lambda`, by
    /// solving `(I - γ·T_π) V = C_π + λ·π`.
    fn policy_values(&self, policy: &ArmPolicy, lambda: f64) -> Vec<f64> {
        let n = self.dynamics.num_states;
        let mut system = DMatrix::<f64>::identity(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for x in 0..n {
            let a = policy.action_by_state[x].index();
            for &(s, p) in &self.dynamics.succ[x][a] {
                system[(x, s)] -= self.gamma * p;
            }
            rhs[x] = self.dynamics.cost[x][a] + lambda * a as f64;
        }
        let values = system
            .lu()
            .solve(&rhs)
            .expect("I - gamma*T is nonsingular for gamma < 1");
        values.as_slice().to_vec()
    }

    /// Penalized Q-value of `(state, action)` given a value vector.
    fn q_value(&self, state: usize, action: usize, lambda: f64, values: &[f64]) -> f64 {
        self.dynamics.cost[state][action]
            + lambda * action as f64
            + self.gamma * self.dynamics.successor_value(state, action, values)
    }

    /// Optimal values and policy at penalty `lambda` via policy iteration.
    /// `start` warm-starts the iteration; ties prefer passive. The Goal
    /// state is subject to the same minimization as every other state: a
    /// negative penalty subsidizes activation there too, so its value is
    /// `λ/(1-γ)` rather than zero whenever `λ < 0`.
    pub fn solve(&self, lambda: f64, start: Option<&ArmPolicy>) -> Result<(Vec<f64>, ArmPolicy)> {
        let n = self.dynamics.num_states;
        let mut policy = match start {
            Some(p) => {
                debug_assert_eq!(p.action_by_state.len(), n);
                p.clone()
            }
            None => ArmPolicy::all_passive(n),
        };
        for _ in 0..POLICY_ITERATION_CAP {
            let values = self.policy_values(&policy, lambda);
            let mut improved = policy.clone();
            for x in 0..n {
                let q0 = self.q_value(x, 0, lambda, &values);
                let q1 = self.q_value(x, 1, lambda, &values);
                improved.action_by_state[x] =
                    if q1 < q0 { Action::Active } else { Action::Passive };
            }
            if improved == policy {
                debug_assert!(self.bellman_residual(lambda, &values) <= VALUE_TOLERANCE);
                return Ok((values, policy));
            }
            policy = improved;
        }
        Err(Error::NoConvergence(POLICY_ITERATION_CAP))
    }

    /// Benefit `B_λ(x) = Q_λ(x,1) - Q_λ(x,0)` at every state, from an
    /// optimal value vector.
    pub fn benefits(&self, lambda: f64, values: &[f64]) -> Vec<f64> {
        (0..self.dynamics.num_states)
            .map(|x| self.q_value(x, 1, lambda, values) - self.q_value(x, 0, lambda, values))
            .collect()
    }

    fn bellman_residual(&self, lambda: f64, values: &[f64]) -> f64 {
        (0..self.dynamics.num_states)
            .map(|x| {
                let q0 = self.q_value(x, 0, lambda, values);
                let q1 = self.q_value(x, 1, lambda, values);
                (values[x] - q0.min(q1)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Solve the λ-penalized single-arm problem: the optimal value vector over
/// canonical states and the optimal policy, ties to passive. The returned
/// values satisfy the Bellman equation to [`VALUE_TOLERANCE`]; the Goal
/// value is `0` for `λ ≥ 0` and `λ/(1-γ)` for `λ < 0`.
pub fn solve_single_arm(
    model: &RobotModel,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, ArmPolicy)> {
    PenalizedArm::new(model, gamma)?.solve(lambda, None)
}

/// Benefit of activation `B_λ(state) = Q_λ(state,1) - Q_λ(state,0)` under
/// the optimal penalized policy. Negative means teleoperation is worth the
/// penalty at this state; `B_λ(Goal) = λ` exactly.
pub fn benefit(model: &RobotModel, gamma: f64, lambda: f64, state: OperatingState) -> Result<f64> {
    let arm = PenalizedArm::new(model, gamma)?;
    let (values, _) = arm.solve(lambda, None)?;
    let benefits = arm.benefits(lambda, &values);
    Ok(benefits[state.canonical_index(model.num_tasks())])
}

/// Row-stochastic transition matrix `T_π` of the chain induced by `policy`,
/// over canonical states.
pub fn policy_transition_matrix(model: &RobotModel, policy: &ArmPolicy) -> Result<DMatrix<f64>> {
    let n = model.num_tasks();
    let num_states = model.num_states();
    assert_eq!(policy.action_by_state.len(), num_states, "policy length");
    let mut t = DMatrix::<f64>::zeros(num_states, num_states);
    for x in 0..num_states {
        let state = OperatingState::from_canonical_index(x, n);
        for (succ, p) in model.transition_distribution(state, policy.action_by_state[x])? {
            t[(x, succ.canonical_index(n))] += p;
        }
    }
    Ok(t)
}

/// Exact discounted cost `D` and active-step count `N` of a fixed policy:
/// one LU factorization of `I - γ·T_π`, two right-hand sides.
pub fn evaluate_policy(
    model: &RobotModel,
    policy: &ArmPolicy,
    gamma: f64,
) -> Result<PolicyEvaluation> {
    let num_states = model.num_states();
    let t = policy_transition_matrix(model, policy)?;
    let system = DMatrix::<f64>::identity(num_states, num_states) - gamma * &t;
    let lu = system.clone().lu();

    let n_tasks = model.num_tasks();
    let mut cost_rhs = DVector::<f64>::zeros(num_states);
    let mut active_rhs = DVector::<f64>::zeros(num_states);
    for x in 0..num_states {
        let state = OperatingState::from_canonical_index(x, n_tasks);
        cost_rhs[x] = model.step_cost(state, policy.action_by_state[x])?;
        active_rhs[x] = policy.action_by_state[x].index() as f64;
    }
    let cost = lu.solve(&cost_rhs).expect("nonsingular for gamma < 1");
    let active = lu.solve(&active_rhs).expect("nonsingular for gamma < 1");

    debug_assert!((&system * &cost - &cost_rhs).amax() <= 1e-10, "cost residual");
    debug_assert!((&system * &active - &active_rhs).amax() <= 1e-10, "count residual");

    Ok(PolicyEvaluation {
        cost: cost.as_slice().to_vec(),
        active_count: active.as_slice().to_vec(),
    })
}

/// Policy evaluation for the adaptive greedy rounds: `D` under the true
/// costs and `N` under the activation indicator of "passive exactly on the
/// marked states".
fn evaluate_passive_set(model: &RobotModel, passive: &[bool], gamma: f64) -> Result<PolicyEvaluation> {
    let policy = ArmPolicy::from_passive_set(passive);
    evaluate_policy(model, &policy, gamma)
}

/// Whittle indices for every state of `model` by the adaptive greedy
/// algorithm.
///
/// Starting from an empty passive set `P`, each round prices every
/// remaining candidate `y` by comparing the exact evaluations of the
/// policies "passive on `P`" and "passive on `P ∪ {y}`":
///
/// ```text
/// μ_y(x) = -(D_P(x) - D_{P∪{y}}(x)) / (N_P(x) - N_{P∪{y}}(x))
/// ```
///
/// over the states where the activation counts actually differ
/// ([`ACTIVE_COUNT_TOLERANCE`]). The smallest price `λ*` wins the round;
/// every candidate attaining it takes `λ*` as its index and joins `P`.
///
/// The Goal state is a candidate like any other. Toggling it changes
/// neither the transition matrix nor the cost vector (it is absorbing and
/// free under both actions), only the activation indicator, so its price
/// is exactly zero and it absorbs in the round where the `λ*` sequence
/// crosses zero. States priced before it are compared against Goal-active
/// policies, which is what a subsidized optimal arm actually does.
///
/// The caller is responsible for only passing arms that are indexable (by
/// certificate or numerical verification); on a non-indexable arm the
/// round penalties may come out non-monotone, which is reported through
/// [`IndexTable::monotone`] rather than an error.
pub fn whittle_indices_adaptive_greedy(model: &RobotModel, gamma: f64) -> Result<IndexTable> {
    model.require_valid()?;
    let num_states = model.num_states();

    let mut passive = vec![false; num_states];
    let mut w_by_state = vec![0.0; num_states];
    let mut rounds: Vec<IndexRound> = Vec::new();
    let mut remaining: Vec<usize> = (0..num_states).collect();

    let mut current = evaluate_passive_set(model, &passive, gamma)?;
    while !remaining.is_empty() {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for &y in &remaining {
            passive[y] = true;
            let with_y = evaluate_passive_set(model, &passive, gamma)?;
            passive[y] = false;

            let mut price = f64::INFINITY;
            let mut priced = false;
            for x in 0..num_states {
                let dn = current.active_count[x] - with_y.active_count[x];
                if dn.abs() > ACTIVE_COUNT_TOLERANCE {
                    priced = true;
                    price = price.min(-(current.cost[x] - with_y.cost[x]) / dn);
                }
            }
            if !priced {
                continue;
            }
            match &mut best {
                None => best = Some((price, vec![y])),
                Some((lambda_star, winners)) => {
                    if price < *lambda_star {
                        *lambda_star = price;
                        winners.clear();
                        winners.push(y);
                    } else if price == *lambda_star {
                        winners.push(y);
                    }
                }
            }
        }
        let (lambda_star, winners) = best.ok_or(Error::DegenerateArm)?;
        // A price of -0.0 (zero cost difference over a positive count
        // difference, the Goal's own round) is stored as the canonical zero.
        let lambda_star = if lambda_star == 0.0 { 0.0 } else { lambda_star };
        for &y in &winners {
            w_by_state[y] = lambda_star;
            passive[y] = true;
        }
        remaining.retain(|y| !winners.contains(y));
        rounds.push(IndexRound { lambda_star, absorbed: winners });
        current = evaluate_passive_set(model, &passive, gamma)?;
    }

    let monotone = rounds.windows(2).all(|w| w[0].lambda_star <= w[1].lambda_star);
    Ok(IndexTable { w_by_state, rounds, monotone })
}

/// Whittle index of one state by bisecting the penalty on the predicate
/// "`state` is in the passive set", solving the penalized arm at each probe.
/// Independent of the adaptive greedy path; the two serve as oracles for
/// each other.
pub fn whittle_index_bisection(
    model: &RobotModel,
    gamma: f64,
    state: OperatingState,
) -> Result<f64> {
    let arm = PenalizedArm::new(model, gamma)?;
    let x = state.canonical_index(model.num_tasks());
    let bound = penalty_bound(model, gamma);

    let mut warm: Option<ArmPolicy> = None;
    let passive_at = |lambda: f64, warm: &mut Option<ArmPolicy>| -> Result<bool> {
        let (values, policy) = arm.solve(lambda, warm.as_ref())?;
        let b = arm.benefits(lambda, &values);
        *warm = Some(policy);
        Ok(b[x] >= 0.0)
    };

    // The index must lie inside ±bound: passive membership is off at the
    // bottom and on at the top, or the arm is behaving non-indexably.
    let (mut lo, mut hi) = (-bound, bound);
    if passive_at(lo, &mut warm)? || !passive_at(hi, &mut warm)? {
        return Err(Error::NotIndexable { state: x });
    }
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if passive_at(mid, &mut warm)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TaskCost, TaskTransition};

    fn model(tasks: Vec<TaskTransition>) -> RobotModel {
        let costs = vec![TaskCost { rho: 2.0, phi: 4.0 }; tasks.len()];
        RobotModel { tasks, costs, teleop_surcharge: 0.75 }
    }

    fn reset_task() -> TaskTransition {
        TaskTransition { p0: 0.3, q0: 0.3, p1n0: 0.6, q1n0: 0.0, p1n1: 0.0, q1n1: 0.7 }
    }

    #[test]
    fn goal_value_tracks_the_penalty_sign() {
        let m = model(vec![reset_task()]);
        // Activation at the Goal buys nothing, so it is worth exactly its
        // penalty: passive with value 0 when the penalty is non-negative
        // (ties included), active farming λ per step when it is a subsidy.
        for lambda in [0.0, 0.3, 40.0] {
            let (values, policy) = solve_single_arm(&m, 0.95, lambda).unwrap();
            assert_eq!(values[2], 0.0, "lambda {lambda}");
            assert_eq!(policy.action_by_state[2], Action::Passive);
        }
        let (values, policy) = solve_single_arm(&m, 0.95, -5.0).unwrap();
        assert!((values[2] - (-5.0 / 0.05)).abs() <= 1e-6, "got {}", values[2]);
        assert_eq!(policy.action_by_state[2], Action::Active);
    }

    #[test]
    fn deterministic_chain_value_is_hand_computable() {
        // One task that always succeeds autonomously: pay rho once, done.
        let m = RobotModel {
            tasks: vec![TaskTransition { p0: 1.0, q0: 0.0, p1n0: 1.0, q1n0: 0.0, p1n1: 0.5, q1n1: 0.0 }],
            costs: vec![TaskCost { rho: 2.0, phi: 4.0 }],
            teleop_surcharge: 0.75,
        };
        let (values, _) = solve_single_arm(&m, 0.99, 0.0).unwrap();
        assert!((values[0] - 2.0).abs() <= 1e-12, "got {}", values[0]);
    }

    #[test]
    fn huge_penalty_forces_passive_everywhere() {
        let m = model(vec![reset_task(); 2]);
        let lambda = 10.0 * m.max_step_cost() / (1.0 - 0.95);
        let (_, policy) = solve_single_arm(&m, 0.95, lambda).unwrap();
        assert!(policy.action_by_state.iter().all(|&a| a == Action::Passive));
    }

    #[test]
    fn benefit_at_goal_equals_the_penalty() {
        let m = model(vec![reset_task()]);
        let b = benefit(&m, 0.95, 0.7, OperatingState::Goal).unwrap();
        assert!((b - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn negative_benefit_when_teleoperation_pays_off() {
        // Expensive fault, very effective recovery: activation must help.
        let m = RobotModel {
            tasks: vec![TaskTransition { p0: 0.3, q0: 0.3, p1n0: 0.3, q1n0: 0.0, p1n1: 0.0, q1n1: 0.9 }],
            costs: vec![TaskCost { rho: 2.0, phi: 100.0 }],
            teleop_surcharge: 0.75,
        };
        let b = benefit(&m, 0.95, 0.0, OperatingState::Task { n: 1, fault: true }).unwrap();
        assert!(b < 0.0, "got {b}");
    }

    #[test]
    fn transition_matrix_rows_are_stochastic_and_structural() {
        let m = model(vec![reset_task(); 2]);
        let passive = ArmPolicy::all_passive(m.num_states());
        let t = policy_transition_matrix(&m, &passive).unwrap();
        for x in 0..m.num_states() {
            assert!((t.row(x).sum() - 1.0).abs() <= 1e-12);
        }
        // Fault rows self-loop under passive; the Goal row always does.
        assert_eq!(t[(1, 1)], 1.0);
        assert_eq!(t[(3, 3)], 1.0);
        assert_eq!(t[(4, 4)], 1.0);

        let m_sure = RobotModel {
            tasks: vec![TaskTransition { p0: 0.5, q0: 0.2, p1n0: 1.0, q1n0: 0.0, p1n1: 0.4, q1n1: 0.2 }],
            costs: vec![TaskCost { rho: 2.0, phi: 4.0 }],
            teleop_surcharge: 0.75,
        };
        let active = ArmPolicy { action_by_state: vec![Action::Active, Action::Active, Action::Passive] };
        let t = policy_transition_matrix(&m_sure, &active).unwrap();
        assert_eq!(t[(0, 2)], 1.0);
    }

    #[test]
    fn all_passive_policy_never_counts_active_steps() {
        let m = model(vec![reset_task(); 3]);
        let eval = evaluate_policy(&m, &ArmPolicy::all_passive(m.num_states()), 0.95).unwrap();
        assert!(eval.active_count.iter().all(|&n| n == 0.0));
        assert_eq!(eval.cost[m.num_states() - 1], 0.0);
        // A passive robot that faults is stuck paying phi forever.
        let fault_value = 4.0 / (1.0 - 0.95);
        assert!((eval.cost[1] - fault_value).abs() <= 1e-9);
    }

    #[test]
    fn active_count_respects_discounted_ceiling() {
        let m = model(vec![reset_task(); 2]);
        let gamma = 0.9;
        let mut policy = ArmPolicy::all_passive(m.num_states());
        for a in policy.action_by_state.iter_mut().take(4) {
            *a = Action::Active;
        }
        let eval = evaluate_policy(&m, &policy, gamma).unwrap();
        let ceiling = 1.0 / (1.0 - gamma);
        for (&n, &d) in eval.active_count.iter().zip(&eval.cost) {
            assert!((0.0..=ceiling + 1e-12).contains(&n));
            assert!(d >= 0.0 && d <= m.max_step_cost() / (1.0 - gamma) + 1e-9);
        }
    }

    #[test]
    fn goal_index_is_zero_and_logged_at_the_zero_crossing() {
        let m = model(vec![reset_task(); 2]);
        let table = whittle_indices_adaptive_greedy(&m, 0.95).unwrap();
        let goal = m.num_states() - 1;
        assert_eq!(table.w_by_state[goal], 0.0);
        let goal_round = table
            .rounds
            .iter()
            .position(|r| r.absorbed == vec![goal])
            .expect("goal gets its own round");
        assert_eq!(table.rounds[goal_round].lambda_star, 0.0);
        assert!(table.monotone, "reset arm from the bounded family is indexable");
    }

    #[test]
    fn greedy_and_bisection_agree_on_a_small_arm() {
        let m = model(vec![reset_task(); 2]);
        let table = whittle_indices_adaptive_greedy(&m, 0.95).unwrap();
        for (x, state) in m.enumerate_states().into_iter().enumerate() {
            let by_bisection = whittle_index_bisection(&m, 0.95, state).unwrap();
            assert!(
                (table.w_by_state[x] - by_bisection).abs() <= 1e-6,
                "state {state}: greedy {} vs bisection {by_bisection}",
                table.w_by_state[x]
            );
        }
    }

    #[test]
    fn bisection_pins_goal_to_zero() {
        let m = model(vec![reset_task()]);
        let w = whittle_index_bisection(&m, 0.95, OperatingState::Goal).unwrap();
        assert!(w.abs() <= BISECTION_WIDTH);
    }

    #[test]
    fn index_is_the_indifference_penalty() {
        let m = model(vec![reset_task()]);
        let state = OperatingState::Task { n: 1, fault: true };
        let w = whittle_index_bisection(&m, 0.95, state).unwrap();
        // Just above the index the state is passive, just below it is active.
        let above = benefit(&m, 0.95, w + 1e-5, state).unwrap();
        let below = benefit(&m, 0.95, w - 1e-5, state).unwrap();
        assert!(above >= 0.0, "above {above}");
        assert!(below < 0.0, "below {below}");
        // And at the index itself the benefit is numerically zero.
        let at = benefit(&m, 0.95, w, state).unwrap();
        assert!(at.abs() <= 1e-6 * (1.0 + m.max_step_cost()), "at {at}");
    }

    #[test]
    fn helpful_teleoperation_earns_a_positive_index() {
        // Never faults, teleoperation strictly faster: leaving it passive
        // must require a positive penalty.
        let m = RobotModel {
            tasks: vec![TaskTransition { p0: 0.3, q0: 0.0, p1n0: 0.9, q1n0: 0.0, p1n1: 0.9, q1n1: 0.0 }],
            costs: vec![TaskCost { rho: 2.0, phi: 4.0 }],
            teleop_surcharge: 0.75,
        };
        let table = whittle_indices_adaptive_greedy(&m, 0.95).unwrap();
        assert!(table.w_by_state[0] > 0.0, "got {}", table.w_by_state[0]);
        let by_bisection =
            whittle_index_bisection(&m, 0.95, OperatingState::Task { n: 1, fault: false }).unwrap();
        assert!((table.w_by_state[0] - by_bisection).abs() <= 1e-6);
    }
}
