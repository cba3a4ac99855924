use std::collections::BTreeMap;

use super::heuristics::{greedy_softmax_policy, rct_policy, switch_policy};
use super::problem::{default_kappa, DesignProblem, DesignSolution, Objective, Regularizer, Tolerances};
use super::range::feasible_utility_range;
use super::solver::{solve_design, DualStart};
use super::DesignError;
use crate::mechanism::PolicyMatrix;
use crate::propensity::AlphaVector;

/// Shared inputs for building a design.
#[derive(Debug, Clone)]
pub struct StrategyContext<'a> {
    pub utilities: &'a [f64],
    pub alpha: &'a AlphaVector,
    /// Arrival regime the design is evaluated under.
    pub objective: Objective,
    pub regularizer: Regularizer,
    /// Regularization weight; the default scale is used when absent.
    pub kappa: Option<f64>,
    pub tolerances: Tolerances,
    /// Cap for greedy softmax.
    pub softmax_cap: f64,
}

impl<'a> StrategyContext<'a> {
    pub fn new(utilities: &'a [f64], alpha: &'a AlphaVector, objective: Objective) -> Self {
        StrategyContext {
            utilities,
            alpha,
            objective,
            regularizer: Regularizer::NegEntropy,
            kappa: None,
            tolerances: Tolerances::default(),
            softmax_cap: 1.0,
        }
    }

    pub fn problem(&self, floor: f64, objective: Objective) -> DesignProblem {
        DesignProblem {
            utilities: self.utilities.to_vec(),
            alpha: self.alpha.clone(),
            utility_floor: floor,
            regularizer: self.regularizer,
            kappa: self.kappa.unwrap_or_else(|| default_kappa(self.alpha, objective)),
            objective,
            tolerances: self.tolerances,
            nuisance_bound: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub policy: PolicyMatrix,
    /// Present for optimized designs.
    pub solution: Option<DesignSolution>,
}

/// A family of designs indexed by one scalar parameter.
pub trait DesignStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameter grid traced by default.
    fn default_grid(&self, ctx: &StrategyContext<'_>) -> Vec<f64>;

    fn design(
        &self,
        ctx: &StrategyContext<'_>,
        param: f64,
        warm: Option<&DualStart>,
    ) -> Result<StrategyOutcome, DesignError>;
}

pub struct Rct;

impl DesignStrategy for Rct {
    fn name(&self) -> &'static str {
        "rct"
    }

    fn default_grid(&self, _: &StrategyContext<'_>) -> Vec<f64> {
        vec![0.0]
    }

    fn design(&self, ctx: &StrategyContext<'_>, _: f64, _: Option<&DualStart>) -> Result<StrategyOutcome, DesignError> {
        Ok(StrategyOutcome {
            policy: rct_policy(ctx.utilities.len(), ctx.alpha.p()),
            solution: None,
        })
    }
}

pub struct Switch;

impl DesignStrategy for Switch {
    fn name(&self) -> &'static str {
        "switch"
    }

    fn default_grid(&self, _: &StrategyContext<'_>) -> Vec<f64> {
        (1..=9).map(|i| i as f64 / 10.0).collect()
    }

    fn design(&self, ctx: &StrategyContext<'_>, param: f64, _: Option<&DualStart>) -> Result<StrategyOutcome, DesignError> {
        Ok(StrategyOutcome {
            policy: switch_policy(ctx.utilities, ctx.alpha.p(), param)?,
            solution: None,
        })
    }
}

pub struct GreedySoftmax;

impl DesignStrategy for GreedySoftmax {
    fn name(&self) -> &'static str {
        "greedy_softmax"
    }

    /// Ten scales log-spaced over `[0.1, 100]`.
    fn default_grid(&self, _: &StrategyContext<'_>) -> Vec<f64> {
        (0..10).map(|i| 10f64.powf(-1.0 + 3.0 * i as f64 / 9.0)).collect()
    }

    fn design(&self, ctx: &StrategyContext<'_>, param: f64, _: Option<&DualStart>) -> Result<StrategyOutcome, DesignError> {
        Ok(StrategyOutcome {
            policy: greedy_softmax_policy(ctx.utilities, ctx.alpha.p(), param, ctx.softmax_cap)?,
            solution: None,
        })
    }
}

/// Regularized optimal design; the parameter is the utility floor.
pub struct Optimized(pub Objective);

impl DesignStrategy for Optimized {
    fn name(&self) -> &'static str {
        match self.0 {
            Objective::Exogenous => "optimized_exogenous",
            Objective::Endogenous => "optimized_endogenous",
        }
    }

    fn default_grid(&self, ctx: &StrategyContext<'_>) -> Vec<f64> {
        default_floor_grid(ctx.utilities, ctx.alpha, 10)
    }

    fn design(
        &self,
        ctx: &StrategyContext<'_>,
        param: f64,
        warm: Option<&DualStart>,
    ) -> Result<StrategyOutcome, DesignError> {
        let solution = solve_design(&ctx.problem(param, self.0), warm)?;
        Ok(StrategyOutcome {
            policy: solution.policy.clone(),
            solution: Some(solution),
        })
    }
}

/// Utility floors from the RCT level up to 98% of the way to `c_max`.
pub fn default_floor_grid(utilities: &[f64], alpha: &AlphaVector, points: usize) -> Vec<f64> {
    let (_, c_max) = feasible_utility_range(utilities, alpha);
    let c_rct = alpha.beta() * utilities.iter().sum::<f64>() / utilities.len() as f64;
    let top = c_rct + 0.98 * (c_max - c_rct);
    match points {
        0 => Vec::new(),
        1 => vec![c_rct],
        _ => (0..points)
            .map(|i| c_rct + (top - c_rct) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Design strategies selectable by name.
pub struct StrategyRegistry {
    entries: BTreeMap<&'static str, Box<dyn DesignStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, strategy: Box<dyn DesignStrategy>) {
        self.entries.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Option<&dyn DesignStrategy> {
        self.entries.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = StrategyRegistry::empty();
        r.register(Box::new(Rct));
        r.register(Box::new(Switch));
        r.register(Box::new(GreedySoftmax));
        r.register(Box::new(Optimized(Objective::Exogenous)));
        r.register(Box::new(Optimized(Objective::Endogenous)));
        r
    }
}
