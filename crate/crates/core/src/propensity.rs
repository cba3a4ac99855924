//! Asymptotic propensity calculus.
//!
//! Under strict priority with fixed queue proportions `p`, budget fraction
//! `beta` and arrivals independent of covariates, a unit in queue `k` is
//! treated with limiting probability
//!
//! ```text
//! alpha_k = ((beta - c_{k-1})_+ - (beta - c_k)_+) / p_k,   c_k = p_1 + ... + p_k
//! ```
//!
//! (zero when `p_k = 0`), so the marginal propensity `pi(x) = sum_k alpha_k theta_k(x)`
//! is affine in the design. The recentered queue shock `alpha_Q - pi(x)` is the
//! limiting instrument.

use thiserror::Error;

use crate::mechanism::{MechanismError, PolicyMatrix, PropensitySource, PropensityTable};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PropensityError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no Monte Carlo draws placed unit {unit} in queue {queue}")]
    AbsentCell { unit: usize, queue: usize },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// Queue-level treatment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    alpha: Vec<f64>,
    beta: f64,
    p: Vec<f64>,
    cumulative: Vec<f64>,
}

fn check_inputs(beta: f64, p: &[f64]) -> Result<Vec<f64>, PropensityError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(PropensityError::Domain(format!("budget fraction {beta} not in (0,1)")));
    }
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(PropensityError::Domain("queue proportions must lie on the simplex".into()));
    }
    // c_0 = 0, c_k = p_1 + ... + p_k
    let mut c = Vec::with_capacity(p.len() + 1);
    c.push(0.0);
    for x in p {
        c.push(c.last().unwrap() + x);
    }
    Ok(c)
}

impl AlphaVector {
    /// Strict-priority limit.
    pub fn from_budget(beta: f64, p: &[f64]) -> Result<Self, PropensityError> {
        let cumulative = check_inputs(beta, p)?;
        let pos = |u: f64| u.max(0.0);
        let alpha = (0..p.len())
            .map(|k| {
                if p[k] > 0.0 {
                    (pos(beta - cumulative[k]) - pos(beta - cumulative[k + 1])) / p[k]
                } else {
                    0.0
                }
            })
            .collect();
        Ok(AlphaVector {
            alpha,
            beta,
            p: p.to_vec(),
            cumulative,
        })
    }

    /// User-supplied queue probabilities (rationed service).
    pub fn custom(alpha: Vec<f64>, beta: f64, p: &[f64]) -> Result<Self, PropensityError> {
        let cumulative = check_inputs(beta, p)?;
        if alpha.len() != p.len() {
            return Err(PropensityError::Domain(format!(
                "{} queue probabilities for {} queues",
                alpha.len(),
                p.len()
            )));
        }
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(PropensityError::Domain("queue probabilities must lie in [0,1]".into()));
        }
        if alpha.windows(2).any(|w| w[0] < w[1]) {
            return Err(PropensityError::Domain(
                "queue probabilities must be nonincreasing in priority order".into(),
            ));
        }
        if alpha.iter().zip(p).any(|(&a, &pk)| pk == 0.0 && a != 0.0) {
            return Err(PropensityError::Domain("empty queues must have zero probability".into()));
        }
        let mass: f64 = alpha.iter().zip(p).map(|(a, p)| a * p).sum();
        if (mass - beta).abs() > 1e-9 {
            return Err(PropensityError::Domain(format!(
                "sum(alpha * p) = {mass} differs from budget fraction {beta}"
            )));
        }
        Ok(AlphaVector {
            alpha,
            beta,
            p: p.to_vec(),
            cumulative,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn get(&self, k: usize) -> f64 {
        self.alpha[k]
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// `c_k` for `k = 0..=K`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// True when every queue has the same probability, so queue assignment
    /// carries no information about treatment.
    pub fn is_constant(&self) -> bool {
        let (lo, hi) = self.range();
        hi - lo <= 1e-12
    }

    pub fn range(&self) -> (f64, f64) {
        let lo = self.alpha.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// `pi(theta) = sum_k alpha_k theta_k`.
pub fn marginal_propensity(theta_row: &[f64], alpha: &AlphaVector) -> f64 {
    theta_row.iter().zip(&alpha.alpha).map(|(t, a)| t * a).sum()
}

/// Limiting instrument `alpha_q - pi(theta)`.
pub fn instrument_residual(theta_row: &[f64], alpha: &AlphaVector, q: usize) -> f64 {
    alpha.alpha[q] - marginal_propensity(theta_row, alpha)
}

/// Finite-n instrument `pi~(i, q) - pi(i)` read from a propensity table.
pub fn finite_instrument(table: &PropensityTable, i: usize, q: usize) -> Result<f64, PropensityError> {
    table
        .queue_conditional(i, q)
        .map(|c| c - table.marginal(i))
        .ok_or(PropensityError::AbsentCell { unit: i, queue: q })
}

/// Propensity table built from the limiting formula.
pub fn asymptotic_table(policy: &PolicyMatrix, alpha: &AlphaVector) -> Result<PropensityTable, PropensityError> {
    if policy.k() != alpha.k() {
        return Err(PropensityError::Domain("policy and alpha disagree on K".into()));
    }
    let conditional = policy
        .rows()
        .flat_map(|_| alpha.alpha.iter().map(|&a| Some(a)))
        .collect();
    let marginal = policy.rows().map(|r| marginal_propensity(r, alpha)).collect();
    Ok(PropensityTable::new(alpha.k(), conditional, marginal, PropensitySource::Asymptotic)?)
}
