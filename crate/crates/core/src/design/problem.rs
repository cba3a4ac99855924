use serde::{Deserialize, Serialize};

use super::DesignError;
use crate::mechanism::PolicyMatrix;
use crate::propensity::{marginal_propensity, AlphaVector};

/// Clamp for the exogenous objective, which is infinite at `pi in {0, 1}`.
pub const PI_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `sum_k theta_k log theta_k`, averaged over units.
    NegEntropy,
    /// `||theta - p||^2`, averaged over units.
    L2ToP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Minimize `E[1/pi + 1/(1-pi)]` (DR variance proxy).
    Exogenous,
    /// Maximize `E[(alpha_Q - pi)^2]` (instrument strength).
    Endogenous,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Exogenous => "exogenous",
            Objective::Endogenous => "endogenous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub constraint_tol: f64,
    pub dual_tol: f64,
    pub max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            constraint_tol: 1e-6,
            dual_tol: 1e-6,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignProblem {
    pub utilities: Vec<f64>,
    pub alpha: AlphaVector,
    pub utility_floor: f64,
    pub regularizer: Regularizer,
    pub kappa: f64,
    pub objective: Objective,
    pub tolerances: Tolerances,
    /// Sup-norm bound on the nuisance uncertainty set. The worst-case
    /// variance is this bound times the objective, so it rescales reported
    /// values and never changes the optimal policy.
    pub nuisance_bound: f64,
}

impl DesignProblem {
    /// Problem with the default regularization weight, `1e-3` times the
    /// objective at `theta = p`.
    pub fn new(
        utilities: Vec<f64>,
        alpha: AlphaVector,
        utility_floor: f64,
        objective: Objective,
    ) -> Result<Self, DesignError> {
        let kappa = default_kappa(&alpha, objective);
        let problem = DesignProblem {
            utilities,
            alpha,
            utility_floor,
            regularizer: Regularizer::NegEntropy,
            kappa,
            objective,
            tolerances: Tolerances::default(),
            nuisance_bound: 1.0,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn n(&self) -> usize {
        self.utilities.len()
    }

    pub fn p(&self) -> &[f64] {
        self.alpha.p()
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if self.utilities.is_empty() {
            return Err(DesignError::Invalid("no units".into()));
        }
        if let Some(u) = self.utilities.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
            return Err(DesignError::Invalid(format!("utility {u} not in (0,1)")));
        }
        if !(self.kappa > 0.0) {
            return Err(DesignError::Invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.nuisance_bound > 0.0) {
            return Err(DesignError::Invalid("nuisance bound must be positive".into()));
        }
        if !self.utility_floor.is_finite() {
            return Err(DesignError::Invalid("utility floor must be finite".into()));
        }
        if self.alpha.p().iter().any(|&p| p <= 0.0) {
            return Err(DesignError::Invalid("every queue needs a positive proportion".into()));
        }
        if self.alpha.is_constant() {
            return Err(DesignError::Degenerate(
                "all queues share one treatment probability, so the design cannot move pi".into(),
            ));
        }
        Ok(())
    }
}

pub fn default_kappa(alpha: &AlphaVector, objective: Objective) -> f64 {
    let at_p = match objective {
        Objective::Exogenous => exogenous_row(alpha.beta()),
        Objective::Endogenous => endogenous_row(alpha.p(), alpha),
    };
    1e-3 * at_p.abs().max(1e-12)
}

pub(crate) fn exogenous_row(pi: f64) -> f64 {
    let pi = pi.clamp(PI_EPS, 1.0 - PI_EPS);
    1.0 / pi + 1.0 / (1.0 - pi)
}

pub(crate) fn endogenous_row(theta: &[f64], alpha: &AlphaVector) -> f64 {
    let pi = marginal_propensity(theta, alpha);
    let second: f64 = theta.iter().zip(alpha.values()).map(|(t, a)| t * a * a).sum();
    second - pi * pi
}

/// `(1/n) sum_i [1/pi_i + 1/(1 - pi_i)]`.
pub fn exogenous_objective(policy: &PolicyMatrix, alpha: &AlphaVector) -> f64 {
    policy.rows().map(|r| exogenous_row(marginal_propensity(r, alpha))).sum::<f64>() / policy.n() as f64
}

/// `(1/n) sum_i Var(alpha_Q | theta_i)`.
pub fn endogenous_objective(policy: &PolicyMatrix, alpha: &AlphaVector) -> f64 {
    policy.rows().map(|r| endogenous_row(r, alpha)).sum::<f64>() / policy.n() as f64
}

pub fn objective_value(policy: &PolicyMatrix, alpha: &AlphaVector, objective: Objective) -> f64 {
    match objective {
        Objective::Exogenous => exogenous_objective(policy, alpha),
        Objective::Endogenous => endogenous_objective(policy, alpha),
    }
}

pub(crate) fn regularizer_row(theta: &[f64], p: &[f64], reg: Regularizer) -> f64 {
    match reg {
        Regularizer::NegEntropy => theta.iter().filter(|t| **t > 0.0).map(|t| t * t.ln()).sum(),
        Regularizer::L2ToP => theta.iter().zip(p).map(|(t, p)| (t - p).powi(2)).sum(),
    }
}

pub fn regularizer_value(policy: &PolicyMatrix, p: &[f64], reg: Regularizer) -> f64 {
    policy.rows().map(|r| regularizer_row(r, p, reg)).sum::<f64>() / policy.n() as f64
}

/// `(1/n) sum_i u_i pi_i`.
pub fn achieved_utility(policy: &PolicyMatrix, alpha: &AlphaVector, utilities: &[f64]) -> f64 {
    policy
        .rows()
        .zip(utilities)
        .map(|(r, u)| u * marginal_propensity(r, alpha))
        .sum::<f64>()
        / policy.n() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSolution {
    pub policy: PolicyMatrix,
    /// Unregularized objective: the exogenous variance proxy or the
    /// endogenous instrument strength.
    pub objective_value: f64,
    /// Objective including the regularization term, in minimization sign
    /// for exogenous and maximization sign for endogenous problems.
    pub regularized_value: f64,
    pub achieved_utility: f64,
    /// `nuisance_bound * objective_value`.
    pub worst_case_value: f64,
    /// Multiplier of the utility floor.
    pub lambda: f64,
    /// Multipliers of the proportion constraints (last queue pinned at 0).
    pub nu: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest of the proportion violation, utility shortfall and
    /// complementary-slackness product.
    pub kkt_residual: f64,
}
