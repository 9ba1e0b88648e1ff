//! Indexability certificates for single-robot models.
//!
//! Two independent routes to the same question:
//!
//! * `theorem_check` evaluates a closed-form sufficient condition per task
//!   (`alpha1 >= 0` and `beta0/(1-gamma) >= -1`) built from the rational
//!   coefficients in [`CoefficientSet`]. Cheap, certifies indexability when
//!   it passes, says nothing when it fails.
//! * `numeric_verify` sweeps the activation penalty over a grid and checks
//!   that the passive set of the optimal penalized policy only ever grows.
//!   Expensive, but decides the examples the closed form cannot.
//!
//! The coefficients are evaluated in their rational-expression form, term
//! by term, with no algebraic re-simplification: the simplified closed
//! forms (`continuation_coefficients`, the reset-family bounds) are computed separately
//! so that any numeric disagreement between the two routes shows up in
//! tests instead of being silently normalized away.

use serde::{Deserialize, Serialize};

use crate::model::{Action, OperatingState, RobotModel, TaskTransition};
use crate::solver::{penalty_bound, ArmPolicy, PenalizedArm};
use crate::{Error, Result};

/// Default number of penalties in the verification sweep.
pub const DEFAULT_GRID_POINTS: usize = 400;

/// A benefit must fall below `-VIOLATION_TOLERANCE` at the refined check
/// before a state is reported as leaving the passive set. The exact linear
/// solves keep benefit noise around 1e-11 even at gamma = 0.99, so this
/// floor only filters states sitting numerically on their own index.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;

/// Denominators smaller than this are reported as degenerate rather than
/// divided by. Valid probabilities and gamma < 1 keep every denominator
/// at least 1 - gamma.
const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Default finite-difference step for the derivative probes.
pub fn default_probe_step(lambda: f64) -> f64 {
    1e-4 * (1.0 + lambda.abs())
}

/// The per-task coefficient family for one discount factor. `alpha1` and
/// `beta0` drive the sufficient condition; the rest exist to express the
/// benefit-derivative recursion and its invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    /// Identically 1.
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: f64,
    pub beta1: f64,
    /// Identically 1.
    pub b00: f64,
    /// Identically 1.
    pub b10: f64,
    pub b01: f64,
    pub b11: f64,
}

impl CoefficientSet {
    /// Residual of the closed-form identity
    /// `alpha1 + beta1/(1-gamma) = 1/b11`; zero up to rounding for every
    /// valid transition.
    pub fn identity_residual(&self, gamma: f64) -> f64 {
        self.alpha1 + self.beta1 / (1.0 - gamma) - 1.0 / self.b11
    }
}

/// Which route produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerificationMethod {
    Theorem,
    Numeric,
}

/// Sufficient-condition diagnostics for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskCondition {
    /// 1-based task number.
    pub task: usize,
    pub alpha1: f64,
    pub beta0: f64,
    pub pass: bool,
}

/// A state observed to leave the passive set as the penalty grew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    /// Canonical state index.
    pub state: usize,
    /// Penalty at which the state was active again after being passive at
    /// a smaller penalty.
    pub lambda: f64,
}

/// Outcome of an indexability check, JSON-serializable for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexabilityVerdict {
    pub method: VerificationMethod,
    pub indexable: bool,
    /// Per-task condition diagnostics (theorem route only).
    pub per_task: Vec<TaskCondition>,
    /// Penalties swept (numeric route only).
    pub lambda_grid: Vec<f64>,
    /// Confirmed monotonicity failures (numeric route only); empty means
    /// indexable.
    pub violations: Vec<MonotonicityViolation>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidModel(format!(
            "discount factor must lie strictly inside (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

fn checked_div(numerator: f64, denominator: f64, what: &str) -> Result<f64> {
    if denominator.abs() <= DENOMINATOR_FLOOR {
        return Err(Error::DegenerateDenominator(format!(
            "{what} evaluated to {denominator}"
        )));
    }
    Ok(numerator / denominator)
}

/// Evaluate the full coefficient family for one task.
pub fn coefficients(tr: &TaskTransition, gamma: f64) -> Result<CoefficientSet> {
    check_gamma(gamma)?;
    let g = gamma;
    let (p0, q0) = (tr.p0, tr.q0);
    let (p1n0, q1n0) = (tr.p1n0, tr.q1n0);
    let (p1n1, q1n1) = (tr.p1n1, tr.q1n1);
    let (r0, r1n0, r1n1) = (tr.r0(), tr.r1n0(), tr.r1n1());

    // Resolvent factors of the three one-state recursions.
    let passive_normal = 1.0 - g * r0;
    let active_normal = 1.0 - g * r1n0;
    let active_fault = 1.0 - g * r1n1;
    // Coupled normal/fault recursion under (passive normal, active fault).
    let coupled = 1.0 - g * r1n1 - g * r0 + g * g * r1n1 * r0 - g * g * q0 * q1n1;
    // Same recursion under (active normal, active fault).
    let coupled_active = 1.0 - g * r1n1 - g * r1n0 + g * g * r1n1 * r1n0 - g * g * q1n1 * q1n0;

    // Shared bracket of the alpha1/beta1 correction terms.
    let bracket = g * r1n0 + g * g * q1n0 * checked_div(q1n1, active_fault, "1 - gamma*r1n1")? - 1.0;

    let alpha1 = 1.0
        + g * checked_div(q1n0, active_fault, "1 - gamma*r1n1")?
        + g * q0 * checked_div(bracket, coupled, "coupled normal/fault denominator")?;
    let beta0 = checked_div(
        g * (p1n0 - p0) + g * g * (p0 * r1n0 - p1n0 * r0),
        passive_normal,
        "1 - gamma*r0",
    )?;
    let beta1 = g * p1n0
        + g * g * q1n0 * checked_div(p1n1, active_fault, "1 - gamma*r1n1")?
        + (g * p0 - g * g * p0 * r1n1 + g * g * q0 * p1n1)
            * checked_div(bracket, coupled, "coupled normal/fault denominator")?;
    let b01 = checked_div(passive_normal, active_normal, "1 - gamma*r1n0")?;
    let b11 = checked_div(coupled, coupled_active, "coupled all-active denominator")?;

    Ok(CoefficientSet { alpha0: 1.0, alpha1, beta0, beta1, b00: 1.0, b10: 1.0, b01, b11 })
}

/// Closed-form sufficient check: indexable if every task satisfies
/// `alpha1 >= 0` and `beta0/(1-gamma) >= -1`. Sufficient only; a failing
/// task means "unknown", not "not indexable".
pub fn theorem_check(model: &RobotModel, gamma: f64) -> Result<IndexabilityVerdict> {
    model.require_valid()?;
    check_gamma(gamma)?;
    let mut per_task = Vec::with_capacity(model.num_tasks());
    for (i, tr) in model.tasks.iter().enumerate() {
        let c = coefficients(tr, gamma)?;
        let pass = c.alpha1 >= 0.0 && c.beta0 / (1.0 - gamma) >= -1.0;
        per_task.push(TaskCondition { task: i + 1, alpha1: c.alpha1, beta0: c.beta0, pass });
    }
    Ok(IndexabilityVerdict {
        method: VerificationMethod::Theorem,
        indexable: per_task.iter().all(|t| t.pass),
        per_task,
        lambda_grid: Vec::new(),
        violations: Vec::new(),
    })
}

/// Simplified `(alpha1, beta0)` for a task whose teleoperation succeeds at
/// the same rate in both modes and never toggles the fault flag
/// (`p1n1 = p1n0`, `q1n0 = q1n1 = 0`). Such tasks always pass the
/// sufficient check.
pub fn continuation_coefficients(tr: &TaskTransition, gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    if !tr.is_continuation_shape() {
        return Err(Error::ShapeViolation(format!(
            "fault-continuation form needs p1n1 = p1n0 and q1n0 = q1n1 = 0, \
             got p1n0={}, q1n0={}, p1n1={}, q1n1={}",
            tr.p1n0, tr.q1n0, tr.p1n1, tr.q1n1
        )));
    }
    let g = gamma;
    let (r0, r1n0) = (tr.r0(), tr.r1n0());
    let passive_normal = 1.0 - g * r0;
    let alpha1 = 1.0 - g * checked_div(tr.q0, passive_normal, "1 - gamma*r0")?;
    let beta0 = checked_div(
        g * (1.0 - g) * (r0 - r1n0) + g * tr.q0 * (1.0 - g * r1n0),
        passive_normal,
        "1 - gamma*r0",
    )?;
    Ok((alpha1, beta0))
}

/// Bounds that make a fault-reset task (`q1n0 = 0`, `p1n1 = 0`) pass the
/// sufficient check: returns `(q1n1_min, q0_max)`. The task's `alpha1` is
/// non-negative exactly when `q1n1 >= q1n1_min`; `q0_max` is the largest
/// fault rate for which that threshold stays reachable (`q1n1_min <= 1`).
/// `q1n1_min` may be negative, meaning no constraint.
pub fn reset_bounds(tr: &TaskTransition, gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    if !tr.is_reset_shape() {
        return Err(Error::ShapeViolation(format!(
            "fault-reset form needs q1n0 = 0 and p1n1 = 0, got q1n0={}, p1n1={}",
            tr.q1n0, tr.p1n1
        )));
    }
    let g = gamma;
    let r0 = tr.r0();
    let q1n1_min = 1.0 - 1.0 / g
        + g * tr.q0 * checked_div(tr.p1n0, 1.0 - g * r0 - g * tr.q0, "1 - gamma*(r0 + q0)")?;
    let q0_max = checked_div(1.0 - g * r0, g * (1.0 + g * tr.p1n0), "gamma*(1 + gamma*p1n0)")?;
    Ok((q1n1_min, q0_max))
}

/// Evenly spaced penalties spanning the interval that provably contains
/// every index of `model`.
pub fn default_lambda_grid(model: &RobotModel, gamma: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2, "a sweep needs at least both endpoints");
    // A free arm has every index at zero, so any positive bracket certifies
    // it; without the fallback the grid would be constant.
    let bound = penalty_bound(model, gamma);
    let bound = if bound > 0.0 { bound } else { 1.0 };
    (0..points)
        .map(|i| -bound + 2.0 * bound * i as f64 / (points - 1) as f64)
        .collect()
}

/// Brute-force indexability check: sweep `lambda_grid`, record the passive
/// set of the optimal penalized policy at each penalty, and confirm the
/// sets are nested.
///
/// The grid must bracket every index: the passive set must be empty at the
/// first penalty and the whole state space at the last, otherwise the
/// sweep cannot certify anything and `GridTooCoarse` is returned.
///
/// A state leaving the passive set between consecutive grid points is only
/// a candidate: its cell is re-swept at ten times the resolution, and the
/// violation is reported only if the refined benefit actually falls below
/// `-`[`VIOLATION_TOLERANCE`] after the state was passive. This filters
/// the false positives that come from states sitting numerically on their
/// own index.
pub fn numeric_verify(
    model: &RobotModel,
    gamma: f64,
    lambda_grid: &[f64],
) -> Result<IndexabilityVerdict> {
    model.require_valid()?;
    check_gamma(gamma)?;
    assert!(lambda_grid.len() >= 2, "a sweep needs at least both endpoints");
    assert!(
        lambda_grid.windows(2).all(|w| w[0] < w[1]),
        "penalty grid must be strictly increasing"
    );

    let arm = PenalizedArm::new(model, gamma)?;
    let num_states = model.num_states();

    let mut warm: Option<ArmPolicy> = None;
    let mut sweep: Vec<Vec<bool>> = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let (values, policy) = arm.solve(lambda, warm.as_ref())?;
        let benefits = arm.benefits(lambda, &values);
        sweep.push(benefits.iter().map(|&b| b >= 0.0).collect());
        warm = Some(policy);
    }

    let first = &sweep[0];
    if first.iter().any(|&m| m) {
        return Err(Error::GridTooCoarse(format!(
            "passive set is not empty at the lowest penalty {}; extend the grid downward",
            lambda_grid[0]
        )));
    }
    let last = sweep.last().expect("grid has at least two points");
    if last.iter().any(|&m| !m) {
        return Err(Error::GridTooCoarse(format!(
            "passive set misses states at the highest penalty {}; extend the grid upward",
            lambda_grid[lambda_grid.len() - 1]
        )));
    }

    // Candidate departures per grid cell, then confirm each cell at 10x
    // resolution before reporting anything.
    let mut violations = Vec::new();
    for cell in 0..lambda_grid.len() - 1 {
        let departed: Vec<usize> =
            (0..num_states).filter(|&x| sweep[cell][x] && !sweep[cell + 1][x]).collect();
        if departed.is_empty() {
            continue;
        }
        let (lo, hi) = (lambda_grid[cell], lambda_grid[cell + 1]);
        let refined: Vec<f64> = (0..=10).map(|k| lo + (hi - lo) * k as f64 / 10.0).collect();
        let mut refined_benefits = Vec::with_capacity(refined.len());
        let mut cell_warm = Some(ArmPolicy::from_passive_set(&sweep[cell]));
        for &lambda in &refined {
            let (values, policy) = arm.solve(lambda, cell_warm.as_ref())?;
            refined_benefits.push(arm.benefits(lambda, &values));
            cell_warm = Some(policy);
        }
        for x in departed {
            let mut was_passive = false;
            for (k, benefits) in refined_benefits.iter().enumerate() {
                if benefits[x] >= 0.0 {
                    was_passive = true;
                } else if was_passive && benefits[x] < -VIOLATION_TOLERANCE {
                    violations.push(MonotonicityViolation { state: x, lambda: refined[k] });
                    break;
                }
            }
        }
    }

    Ok(IndexabilityVerdict {
        method: VerificationMethod::Numeric,
        indexable: violations.is_empty(),
        per_task: Vec::new(),
        lambda_grid: lambda_grid.to_vec(),
        violations,
    })
}

/// Optimal values and benefits at `lambda` and `lambda + h`, valid only
/// when both penalties share one optimal policy, so difference quotients
/// through the pair probe a single smooth branch of the value function.
struct ProbePair {
    base_values: Vec<f64>,
    base_benefits: Vec<f64>,
    step_values: Vec<f64>,
    step_benefits: Vec<f64>,
}

fn solve_probe_pair(model: &RobotModel, gamma: f64, lambda: f64, h: f64) -> Result<ProbePair> {
    assert!(h > 0.0, "probe step must be positive");
    let arm = PenalizedArm::new(model, gamma)?;
    let (base_values, base_policy) = arm.solve(lambda, None)?;
    let (step_values, step_policy) = arm.solve(lambda + h, Some(&base_policy))?;
    if base_policy != step_policy {
        return Err(Error::PolicyStraddle { lambda, h });
    }
    let base_benefits = arm.benefits(lambda, &base_values);
    let step_benefits = arm.benefits(lambda + h, &step_values);
    Ok(ProbePair { base_values, base_benefits, step_values, step_benefits })
}

/// Finite-difference slope of the benefit `B_lambda(state)` in the
/// penalty. Non-negative for indexable arms; exactly 1 at the Goal state.
pub fn benefit_derivative_probe(
    model: &RobotModel,
    gamma: f64,
    lambda: f64,
    state: OperatingState,
    h: f64,
) -> Result<f64> {
    let pair = solve_probe_pair(model, gamma, lambda, h)?;
    let x = state.canonical_index(model.num_tasks());
    Ok((pair.step_benefits[x] - pair.base_benefits[x]) / h)
}

/// Finite-difference slope of the optimal value `V_lambda(state)` in the
/// penalty; lies in `[0, 1/(1-gamma)]` up to rounding.
pub fn value_derivative_probe(
    model: &RobotModel,
    gamma: f64,
    lambda: f64,
    state: OperatingState,
    h: f64,
) -> Result<f64> {
    let pair = solve_probe_pair(model, gamma, lambda, h)?;
    let x = state.canonical_index(model.num_tasks());
    Ok((pair.step_values[x] - pair.base_values[x]) / h)
}

/// Actions of the optimal penalized policy, exposed for switch-point
/// diagnostics in reports.
pub fn optimal_actions(model: &RobotModel, gamma: f64, lambda: f64) -> Result<Vec<Action>> {
    let arm = PenalizedArm::new(model, gamma)?;
    let (_, policy) = arm.solve(lambda, None)?;
    Ok(policy.action_by_state)
}
