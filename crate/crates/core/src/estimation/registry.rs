use std::collections::BTreeMap;

use super::estimators::{
    estimate_dr_ate, estimate_iv_ratio_asymptotic, estimate_iv_ratio_table, estimate_pliv, estimate_pliv_table,
};
use super::nuisance::{NuisanceSet, Sample};
use super::report::Estimate;
use super::EstimationError;
use crate::mechanism::{PolicyMatrix, PropensityTable};
use crate::propensity::{marginal_propensity, AlphaVector};

/// Everything an estimator may draw on for one realization.
pub struct EstimationInput<'a> {
    pub sample: &'a Sample,
    pub policy: &'a PolicyMatrix,
    pub alpha: &'a AlphaVector,
    pub nuisances: &'a NuisanceSet,
    /// Finite-n propensities; the limiting formula is used when absent.
    pub table: Option<&'a PropensityTable>,
    pub gamma: f64,
    pub relevance_floor: f64,
}

impl EstimationInput<'_> {
    pub fn marginal_propensities(&self) -> Vec<f64> {
        match self.table {
            Some(t) => t.marginals().to_vec(),
            None => self.policy.rows().map(|r| marginal_propensity(r, self.alpha)).collect(),
        }
    }
}

pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, input: &EstimationInput<'_>) -> Result<Estimate, EstimationError>;
}

struct DrAte;

impl Estimator for DrAte {
    fn name(&self) -> &'static str {
        "dr_ate"
    }

    fn estimate(&self, input: &EstimationInput<'_>) -> Result<Estimate, EstimationError> {
        estimate_dr_ate(input.sample, &input.marginal_propensities(), input.nuisances, input.gamma)
    }
}

struct Pliv;

impl Estimator for Pliv {
    fn name(&self) -> &'static str {
        "pliv"
    }

    fn estimate(&self, input: &EstimationInput<'_>) -> Result<Estimate, EstimationError> {
        match input.table {
            Some(t) => estimate_pliv_table(input.sample, t, input.nuisances, input.relevance_floor),
            None => estimate_pliv(input.sample, input.policy, input.alpha, input.nuisances, input.relevance_floor),
        }
    }
}

struct IvRatio;

impl Estimator for IvRatio {
    fn name(&self) -> &'static str {
        "iv_ratio"
    }

    fn estimate(&self, input: &EstimationInput<'_>) -> Result<Estimate, EstimationError> {
        match input.table {
            Some(t) => estimate_iv_ratio_table(input.sample, t),
            None => estimate_iv_ratio_asymptotic(input.sample, input.policy, input.alpha),
        }
    }
}

/// Estimators selectable by name.
pub struct EstimatorRegistry {
    entries: BTreeMap<&'static str, Box<dyn Estimator>>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        EstimatorRegistry { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, estimator: Box<dyn Estimator>) {
        self.entries.insert(estimator.name(), estimator);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Estimator> {
        self.entries.get(name).map(|e| e.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        let mut r = EstimatorRegistry::empty();
        r.register(Box::new(DrAte));
        r.register(Box::new(Pliv));
        r.register(Box::new(IvRatio));
        r
    }
}
