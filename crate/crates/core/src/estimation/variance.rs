use super::EstimationError;
use crate::mechanism::PolicyMatrix;
use crate::propensity::{instrument_residual, marginal_propensity, AlphaVector};

/// Limiting variance of the DR estimator,
/// `E[Var(Y|1,X)/pi + Var(Y|0,X)/(1-pi)] + Var(mu1 - mu0)`, averaged over units.
pub fn variance_dr_formula(pi: &[f64], var0: &[f64], var1: &[f64], cate: &[f64]) -> Result<f64, EstimationError> {
    let n = pi.len();
    if n == 0 || var0.len() != n || var1.len() != n || cate.len() != n {
        return Err(EstimationError::Invalid("variance inputs differ in length".into()));
    }
    let bad: Vec<usize> = (0..n).filter(|&i| !(pi[i] > 0.0 && pi[i] < 1.0)).collect();
    if !bad.is_empty() {
        return Err(EstimationError::Positivity { units: bad, gamma: 0.0 });
    }
    let weighted: f64 = (0..n).map(|i| var1[i] / pi[i] + var0[i] / (1.0 - pi[i])).sum::<f64>() / n as f64;
    let m = cate.iter().sum::<f64>() / n as f64;
    let spread = cate.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n as f64;
    Ok(weighted + spread)
}

/// DR variance with propensities from the limiting formula.
pub fn variance_dr_policy(
    policy: &PolicyMatrix,
    alpha: &AlphaVector,
    var0: &[f64],
    var1: &[f64],
    cate: &[f64],
) -> Result<f64, EstimationError> {
    let pi: Vec<f64> = policy.rows().map(|r| marginal_propensity(r, alpha)).collect();
    variance_dr_formula(&pi, var0, var1, cate)
}

/// `E_Q[(alpha_Q - pi)^2]` for each unit.
pub fn instrument_strength(policy: &PolicyMatrix, alpha: &AlphaVector) -> Vec<f64> {
    policy
        .rows()
        .map(|row| {
            (0..alpha.k())
                .map(|q| row[q] * instrument_residual(row, alpha, q).powi(2))
                .sum()
        })
        .collect()
}

/// Limiting variance of PLIV with the optimal instrument,
/// `(E[(alpha_Q - pi)^2 / sigma])^{-1}`.
pub fn variance_pliv_formula(policy: &PolicyMatrix, alpha: &AlphaVector, sigma: &[f64]) -> Result<f64, EstimationError> {
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / s).collect();
    variance_instrument_formula(policy, alpha, sigma, &w)
}

/// Limiting variance of the PLIV moment with instrument `w(X) (alpha_Q - pi)`:
/// `E[w^2 s sigma] / E[w s]^2` where `s = E[(alpha_Q - pi)^2 | X]`.
pub fn variance_instrument_formula(
    policy: &PolicyMatrix,
    alpha: &AlphaVector,
    sigma: &[f64],
    weights: &[f64],
) -> Result<f64, EstimationError> {
    let n = policy.n();
    if sigma.len() != n || weights.len() != n || policy.k() != alpha.k() {
        return Err(EstimationError::Invalid("variance inputs differ in shape".into()));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(EstimationError::Invalid("conditional variances must be positive".into()));
    }
    let s = instrument_strength(policy, alpha);
    let num: f64 = (0..n).map(|i| weights[i].powi(2) * s[i] * sigma[i]).sum::<f64>() / n as f64;
    let den: f64 = (0..n).map(|i| weights[i] * s[i]).sum::<f64>() / n as f64;
    if !(den.abs() > 0.0) {
        return Err(EstimationError::Relevance("design has no usable queue randomization".into()));
    }
    Ok(num / (den * den))
}
