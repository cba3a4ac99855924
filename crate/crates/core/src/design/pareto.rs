use super::problem::{achieved_utility, objective_value, DesignProblem, DesignSolution, Objective};
use super::solver::{solve_design, DualStart};
use super::strategy::{DesignStrategy, StrategyContext};
use super::DesignError;
use crate::estimation::{variance_dr_formula, EstimationError, NuisanceSet};
use crate::mechanism::PolicyMatrix;
use crate::propensity::{marginal_propensity, AlphaVector};
use crate::estimation::instrument_strength;

/// Plug-in limiting variances of the estimator matched to each arrival regime.
#[derive(Debug, Clone)]
pub struct VarianceModel {
    pub nuisances: NuisanceSet,
    pub h: Vec<f64>,
}

impl VarianceModel {
    /// Variance proxy of a policy and its per-unit influence values (for
    /// bootstrap bands over the cohort).
    ///
    /// Exogenous: the DR variance. Endogenous: the PLIV variance with the
    /// optimal instrument.
    pub fn proxy(
        &self,
        policy: &PolicyMatrix,
        alpha: &AlphaVector,
        objective: Objective,
    ) -> Result<(f64, Vec<f64>), EstimationError> {
        let n = self.h.len();
        let pi: Vec<f64> = policy.rows().map(|r| marginal_propensity(r, alpha)).collect();
        let nv = self.nuisances.evaluate(&self.h, &pi);
        match objective {
            Objective::Exogenous => {
                let cate: Vec<f64> = (0..n).map(|i| nv.mu1[i] - nv.mu0[i]).collect();
                let v = variance_dr_formula(&pi, &nv.var0, &nv.var1, &cate)?;
                let mean_cate = cate.iter().sum::<f64>() / n as f64;
                let terms: Vec<f64> = (0..n)
                    .map(|i| nv.var1[i] / pi[i] + nv.var0[i] / (1.0 - pi[i]) + (cate[i] - mean_cate).powi(2))
                    .collect();
                Ok((v, terms.iter().map(|t| t - v).collect()))
            }
            Objective::Endogenous => {
                let s = instrument_strength(policy, alpha);
                let w: Vec<f64> = (0..n).map(|i| s[i] / nv.sigma[i]).collect();
                let mean_w = w.iter().sum::<f64>() / n as f64;
                if !(mean_w > 0.0) {
                    return Err(EstimationError::Relevance("design has no usable queue randomization".into()));
                }
                let v = 1.0 / mean_w;
                Ok((v, w.iter().map(|x| -v * v * (x - mean_w)).collect()))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrontierPoint {
    /// Utility floor (optimized designs) or heuristic parameter.
    pub param: f64,
    pub policy: Option<PolicyMatrix>,
    pub solution: Option<DesignSolution>,
    pub achieved_utility: f64,
    /// Design objective of the policy under the sweep's arrival regime.
    pub design_objective: f64,
    pub variance: Result<(f64, Vec<f64>), EstimationError>,
    /// Set when the design itself could not be built.
    pub error: Option<DesignError>,
}

impl FrontierPoint {
    fn failed(param: f64, error: DesignError) -> Self {
        FrontierPoint {
            param,
            policy: None,
            solution: None,
            achieved_utility: f64::NAN,
            design_objective: f64::NAN,
            variance: Err(EstimationError::Invalid("no design".into())),
            error: Some(error),
        }
    }
}

/// Traces a strategy over a parameter grid. Optimized strategies are
/// warm-started from the previous point's multipliers; failures are recorded
/// and the sweep continues.
pub fn sweep_strategy(
    strategy: &dyn DesignStrategy,
    ctx: &StrategyContext<'_>,
    grid: &[f64],
    variance: &VarianceModel,
) -> Vec<FrontierPoint> {
    let mut warm: Option<DualStart> = None;
    let mut out = Vec::with_capacity(grid.len());
    for &param in grid {
        match strategy.design(ctx, param, warm.as_ref()) {
            Ok(outcome) => {
                if let Some(sol) = &outcome.solution {
                    warm = Some(DualStart {
                        nu: sol.nu.clone(),
                        lambda: sol.lambda,
                    });
                }
                let policy = outcome.policy;
                out.push(FrontierPoint {
                    param,
                    achieved_utility: achieved_utility(&policy, ctx.alpha, ctx.utilities),
                    design_objective: objective_value(&policy, ctx.alpha, ctx.objective),
                    variance: variance.proxy(&policy, ctx.alpha, ctx.objective),
                    policy: Some(policy),
                    solution: outcome.solution,
                    error: None,
                });
            }
            Err(e) => out.push(FrontierPoint::failed(param, e)),
        }
    }
    out
}

/// One warm-started solve per utility floor of `template`'s program.
pub fn pareto_sweep(template: &DesignProblem, grid: &[f64], variance: &VarianceModel) -> Vec<FrontierPoint> {
    let mut warm: Option<DualStart> = None;
    let mut out = Vec::with_capacity(grid.len());
    for &c in grid {
        let mut problem = template.clone();
        problem.utility_floor = c;
        match solve_design(&problem, warm.as_ref()) {
            Ok(sol) => {
                warm = Some(DualStart {
                    nu: sol.nu.clone(),
                    lambda: sol.lambda,
                });
                out.push(FrontierPoint {
                    param: c,
                    achieved_utility: sol.achieved_utility,
                    design_objective: sol.objective_value,
                    variance: variance.proxy(&sol.policy, &template.alpha, template.objective),
                    policy: Some(sol.policy.clone()),
                    solution: Some(sol),
                    error: None,
                });
            }
            Err(e) => out.push(FrontierPoint::failed(c, e)),
        }
    }
    out
}
