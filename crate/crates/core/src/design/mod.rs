//! Queue-assignment designs: regularized optimal designs trading off
//! estimator variance against utility, the heuristic baselines, and
//! Pareto sweeps over them.

mod heuristics;
mod pareto;
mod problem;
mod range;
mod solver;
mod strategy;

use thiserror::Error;

use crate::mechanism::MechanismError;

pub use heuristics::{greedy_softmax_policy, quantile_queues, rct_policy, switch_policy};
pub use pareto::{pareto_sweep, sweep_strategy, FrontierPoint, VarianceModel};
pub use problem::{
    achieved_utility, default_kappa, endogenous_objective, exogenous_objective, objective_value, regularizer_value,
    DesignProblem, DesignSolution, Objective, Regularizer, Tolerances, PI_EPS,
};
pub use range::{assortative_policy, feasible_utility_range};
pub use solver::{optimize_endogenous, optimize_exogenous, solve_design, DualStart};
pub use strategy::{
    default_floor_grid, DesignStrategy, GreedySoftmax, Optimized, Rct, StrategyContext, StrategyOutcome,
    StrategyRegistry, Switch,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DesignError {
    #[error("utility floor {floor} exceeds the largest achievable utility {c_max}")]
    Infeasible { floor: f64, c_max: f64 },
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("barrier divergence: {0}")]
    Divergence(String),
    #[error("invalid design input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}
