use anyhow::{anyhow, Result};
use queuerand::cohort::{generate_bias_cohort, generate_cohort, Cohort, DgpTag};
use queuerand::design::DesignError;
use queuerand::estimation::{fit_nuisances, EstimationError, FitMethod, NuisanceSet, Sample};
use queuerand::mechanism::{allocate, sample_queues, PolicyMatrix};
use queuerand::rng::derive_seed;

use crate::config::{NuisanceMethod, RunConfig};

pub fn cohort(cfg: &RunConfig, n: usize, seed: u64) -> Result<Cohort> {
    let c = &cfg.cohort;
    match c.dgp {
        DgpTag::Bernoulli => generate_cohort(n, c.tau, c.psi, &c.h_law, seed),
        DgpTag::PartiallyLinear => generate_bias_cohort(n, c.tau, c.psi, &c.h_law, seed),
    }
    .map_err(|e| anyhow!("cohort: {e}"))
}

pub fn fit_method(cfg: &RunConfig) -> Option<FitMethod> {
    match cfg.estimation.nuisance {
        NuisanceMethod::Oracle => None,
        NuisanceMethod::Binned => Some(FitMethod::Binned {
            bins: cfg.estimation.bins,
        }),
        NuisanceMethod::Polynomial => Some(FitMethod::Polynomial {
            degree: cfg.estimation.degree,
        }),
    }
}

/// Oracle nuisances, or nuisances fitted on one RCT realization of `cohort`.
pub fn design_nuisances(cfg: &RunConfig, cohort: &Cohort, seed: u64) -> Result<NuisanceSet, EstimationError> {
    let floor = cfg.estimation.sigma_floor;
    let Some(method) = fit_method(cfg) else {
        return Ok(NuisanceSet::oracle(cfg.cohort.dgp, cfg.cohort.psi).with_sigma_floor(floor));
    };
    let p = cfg.p();
    let policy = PolicyMatrix::uniform(cohort.n(), &p).map_err(|e| EstimationError::Invalid(e.to_string()))?;
    let spec = cfg
        .queue_spec(cohort.n(), cfg.service_mode())
        .map_err(EstimationError::Invalid)?;
    let queues = sample_queues(&policy, derive_seed(seed, 0x9170));
    let trace = allocate(cohort, &queues, &spec).map_err(|e| EstimationError::Invalid(e.to_string()))?;
    let sample = Sample::from_trace(cohort, &trace)?;
    fit_nuisances(&sample, method, floor)
}

pub fn design_status(e: &DesignError) -> &'static str {
    match e {
        DesignError::Infeasible { .. } => "infeasible",
        DesignError::Degenerate(_) => "degenerate",
        DesignError::Divergence(_) => "divergence",
        DesignError::Invalid(_) => "invalid",
        DesignError::Mechanism(_) => "mechanism_error",
    }
}

pub fn estimation_status(e: &EstimationError) -> &'static str {
    match e {
        EstimationError::Positivity { .. } => "positivity_error",
        EstimationError::Relevance(_) => "relevance_error",
        EstimationError::Monotonicity(_) => "monotonicity_error",
        EstimationError::Fit(_) => "fit_error",
        EstimationError::Invalid(_) => "invalid",
        EstimationError::Propensity(_) => "propensity_error",
    }
}
