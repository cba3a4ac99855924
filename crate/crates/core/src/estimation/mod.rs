//! Treatment-effect estimators, their limiting variances, multiplier
//! bootstrap inference, and the complier decomposition of the IV ratio.

mod bootstrap;
mod estimators;
mod late;
mod nuisance;
mod registry;
mod report;
mod variance;

use thiserror::Error;

use crate::propensity::PropensityError;

pub use bootstrap::{multiplier_bands, multiplier_bootstrap, quantile_sorted, BootstrapSummary, DEFAULT_BOOTSTRAP_REPS};
pub use estimators::{
    estimate_dr_ate, estimate_iv_ratio, estimate_iv_ratio_asymptotic, estimate_iv_ratio_table, estimate_pliv,
    estimate_pliv_table,
};
pub use late::{late_decomposition, LateDecomposition, PairLate};
pub use nuisance::{
    fit_nuisances, split_indices, Curve, FitMethod, FitTag, NuisanceSet, NuisanceValues, Sample, DEFAULT_SIGMA_FLOOR,
};
pub use registry::{EstimationInput, Estimator, EstimatorRegistry};
pub use report::{Estimate, EstimateReport, Method, WALD_Z};
pub use variance::{
    instrument_strength, variance_dr_formula, variance_dr_policy, variance_instrument_formula, variance_pliv_formula,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EstimationError {
    #[error("positivity violated (gamma = {gamma}) at units {units:?}; the design is too deterministic for ATE estimation")]
    Positivity { units: Vec<usize>, gamma: f64 },
    #[error("instrument relevance failed: {0}")]
    Relevance(String),
    #[error("monotonicity violated: {0}")]
    Monotonicity(String),
    #[error("nuisance fit failed: {0}")]
    Fit(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
}
