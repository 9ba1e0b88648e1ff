//! Operator allocation for fleets of semi-autonomous robots, modeled as a
//! restless multi-armed bandit.
//!
//! Each robot works through a fixed sequence of tasks and can fall into a
//! fault state it cannot leave on its own. A pool of M human operators can
//! each teleoperate one robot at a time; teleoperation changes the robot's
//! transition probabilities and adds a per-step surcharge. The toolkit
//! covers the full pipeline:
//!
//! ```text
//!   model ──> indexability ──> solver ──> policies ──> sim
//!   (arms)    (certificates)   (indices)  (allocation)  (Monte Carlo)
//! ```
//!
//! * [`model`] — the single-robot controlled Markov chain and the joint
//!   multi-robot scenario, with structural validation.
//! * [`indexability`] — closed-form sufficient conditions for indexability,
//!   specialized bounds for the two fault families, and a brute-force
//!   numerical verifier that sweeps the activation penalty.
//! * [`solver`] — the penalized single-arm MDP solver, exact policy
//!   evaluation, and two independent Whittle index algorithms (adaptive
//!   greedy and bisection) that serve as oracles for each other.
//! * [`policies`] — allocation policies over the joint state: Whittle index,
//!   exact optimal (joint value iteration), reactive, l-step myopic, and
//!   benefit-maximizing.
//! * [`sim`] — scenario generation, seeded reproducible rollouts with common
//!   random numbers, statistical aggregation, and decision-latency
//!   benchmarks.

pub mod indexability;
pub mod model;
pub mod policies;
pub mod sim;
pub mod solver;

pub use model::{
    Action, JointScenario, OperatingState, RobotModel, TaskCost, TaskTransition,
};

/// Everything that can go wrong across the toolkit.
///
/// Validation findings are data, not errors: [`model::RobotModel::validate`]
/// returns a list of violations instead of failing.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A state was passed to a model it does not belong to.
    #[error("invalid state for this model: {0}")]
    InvalidState(String),

    /// A model failed structural validation where a valid model is required.
    #[error("model failed validation: {0}")]
    InvalidModel(String),

    /// A scenario-level invariant (operator budget, discount range) failed.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// A coefficient denominator vanished. Only possible for gamma at 1 or
    /// probabilities outside their valid ranges.
    #[error("degenerate denominator in coefficient computation: {0}")]
    DegenerateDenominator(String),

    /// A task does not have the transition shape the operation requires.
    #[error("task does not have the required shape: {0}")]
    ShapeViolation(String),

    /// The penalty grid failed to bracket the index range, so monotonicity
    /// of the passive set cannot be certified either way.
    #[error("penalty grid too coarse to certify: {0}")]
    GridTooCoarse(String),

    /// The optimal policy switches somewhere inside a finite-difference
    /// probe interval, so the difference quotient would mix two branches
    /// of the value function. Shrink the step or move the base penalty.
    #[error("optimal policy switches inside the probe interval [{lambda}, {lambda} + {h}]")]
    PolicyStraddle { lambda: f64, h: f64 },

    /// An iterative solver hit its iteration cap. Cannot occur for a
    /// discounted problem with a valid model; signals a bug.
    #[error("solver failed to converge within {0} iterations")]
    NoConvergence(usize),

    /// The adaptive greedy round could not price any remaining candidate
    /// because every activation-count difference was below tolerance.
    #[error("degenerate model: no candidate state changes the active count")]
    DegenerateArm,

    /// Bisection found the passive-membership predicate non-monotone, so
    /// the arm is not indexable and the index is undefined.
    #[error("arm is not indexable: passive membership of state {state} is not monotone in the penalty")]
    NotIndexable { state: usize },

    /// The joint product state space exceeds the configured cap.
    #[error("joint state space has {size} states, above the cap of {cap}; use an index policy instead")]
    JointSpaceTooLarge { size: usize, cap: usize },

    /// The scenario generator exhausted its resampling budget.
    #[error("scenario generator failed: {0}")]
    Generator(String),
}

pub type Result<T> = std::result::Result<T, Error>;
