//! Experimental population and synthetic data-generating processes.
//!
//! The covariate is a scalar risk score `h` in (0, 1) which doubles as the
//! policymaker's utility. Two generators are provided:
//!
//! * [`generate_cohort`]: Bernoulli outcomes with `E[Y0|h] = h`,
//!   `E[Y1|h] = h + psi` and arrivals iid uniform on `[0, tau]`.
//! * [`generate_bias_cohort`]: partially linear outcomes `Y0 = h + U`,
//!   `Y1 = psi + h + U` with `U ~ Uniform(-0.2h, 0.2h)`, and arrivals ordered
//!   by decreasing `U` so that arrival time is confounded with outcomes.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid cohort: {0}")]
    Invalid(String),
}

/// Distribution of the risk score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreLaw {
    /// `lo + (hi - lo) * Beta(a, b)`.
    Beta { a: f64, b: f64, lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for ScoreLaw {
    fn default() -> Self {
        ScoreLaw::Beta {
            a: 2.0,
            b: 5.0,
            lo: 0.1,
            hi: 0.9,
        }
    }
}

impl ScoreLaw {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            ScoreLaw::Beta { lo, hi, .. } | ScoreLaw::Uniform { lo, hi } => (lo, hi),
        }
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let (lo, hi) = self.support();
        if !(lo > 0.0 && hi < 1.0 && lo < hi) {
            return Err(CohortError::Domain(format!(
                "score support [{lo}, {hi}] must satisfy 0 < lo < hi < 1"
            )));
        }
        if let ScoreLaw::Beta { a, b, .. } = *self {
            if !(a > 0.0 && b > 0.0) {
                return Err(CohortError::Domain(format!(
                    "beta shape parameters must be positive, got ({a}, {b})"
                )));
            }
        }
        Ok(())
    }

    fn sampler(&self) -> impl FnMut(&mut rand_chacha::ChaCha8Rng) -> f64 {
        let law = *self;
        let beta = match law {
            ScoreLaw::Beta { a, b, .. } => Some(Beta::new(a, b).expect("validated shapes")),
            ScoreLaw::Uniform { .. } => None,
        };
        move |rng| {
            let (lo, hi) = law.support();
            let x = match &beta {
                Some(d) => d.sample(rng),
                None => rng.random::<f64>(),
            };
            lo + (hi - lo) * x
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpTag {
    Bernoulli,
    PartiallyLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: usize,
    /// Risk score; also the utility of treating this unit.
    pub h: f64,
    pub arrival: f64,
    pub y0: f64,
    pub y1: f64,
    /// Latent confounder `U` (bias cohort only).
    pub confounder: Option<f64>,
}

impl Unit {
    /// Observed outcome under treatment status `z`.
    pub fn outcome(&self, treated: bool) -> f64 {
        if treated {
            self.y1
        } else {
            self.y0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    units: Vec<Unit>,
    tau: u32,
    dgp: DgpTag,
}

impl Cohort {
    pub fn new(units: Vec<Unit>, tau: u32, dgp: DgpTag) -> Result<Self, CohortError> {
        if tau == 0 {
            return Err(CohortError::Invalid("horizon must be positive".into()));
        }
        for (i, u) in units.iter().enumerate() {
            if u.id != i {
                return Err(CohortError::Invalid(format!(
                    "unit ids must be dense 0..n-1, found {} at position {i}",
                    u.id
                )));
            }
            if !(u.h > 0.0 && u.h < 1.0) {
                return Err(CohortError::Invalid(format!("unit {i}: score {} not in (0,1)", u.h)));
            }
            if !(u.arrival >= 0.0 && u.arrival <= f64::from(tau)) {
                return Err(CohortError::Invalid(format!(
                    "unit {i}: arrival {} outside [0, {tau}]",
                    u.arrival
                )));
            }
        }
        Ok(Cohort { units, tau, dgp })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn dgp(&self) -> DgpTag {
        self.dgp
    }

    pub fn scores(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.h).collect()
    }

    pub fn arrivals(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.arrival).collect()
    }

    /// Copy of the cohort with arrivals replaced.
    pub fn with_arrivals(&self, arrivals: &[f64]) -> Result<Cohort, CohortError> {
        if arrivals.len() != self.n() {
            return Err(CohortError::Invalid("arrival vector length mismatch".into()));
        }
        let units = self
            .units
            .iter()
            .zip(arrivals)
            .map(|(u, &a)| Unit { arrival: a, ..u.clone() })
            .collect();
        Cohort::new(units, self.tau, self.dgp)
    }
}

fn check_effect(lo: f64, hi: f64, psi: f64) -> Result<(), CohortError> {
    if lo + psi < 0.0 || hi + psi > 1.0 {
        return Err(CohortError::Domain(format!(
            "effect {psi} pushes treated means outside [0,1] for scores in [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn score_bounds(h: &[f64]) -> Result<(f64, f64), CohortError> {
    if h.is_empty() {
        return Err(CohortError::Invalid("empty score vector".into()));
    }
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo > 0.0 && hi < 1.0) {
        return Err(CohortError::Domain(format!("scores must lie in (0,1), got [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

fn draw_scores(n: usize, law: &ScoreLaw, seed: u64) -> Result<Vec<f64>, CohortError> {
    law.validate()?;
    let mut rng = rng::stream(rng::derive_seed(seed, 0x5C0E), 0);
    let mut sample = law.sampler();
    Ok((0..n).map(|_| sample(&mut rng)).collect())
}

/// Bernoulli cohort with scores drawn from `law`.
pub fn generate_cohort(
    n: usize,
    tau: u32,
    psi: f64,
    law: &ScoreLaw,
    seed: u64,
) -> Result<Cohort, CohortError> {
    law.validate()?;
    let (lo, hi) = law.support();
    check_effect(lo, hi, psi)?;
    let h = draw_scores(n, law, seed)?;
    cohort_from_scores(&h, tau, psi, seed)
}

/// Bernoulli cohort on fixed scores; arrivals and outcomes are redrawn from `seed`.
pub fn cohort_from_scores(h: &[f64], tau: u32, psi: f64, seed: u64) -> Result<Cohort, CohortError> {
    let (lo, hi) = score_bounds(h)?;
    check_effect(lo, hi, psi)?;
    let mut rng = rng::stream(rng::derive_seed(seed, 0xB0B0), 0);
    let horizon = f64::from(tau);
    let units = h
        .iter()
        .enumerate()
        .map(|(id, &h)| {
            let arrival = horizon * rng.random::<f64>();
            let y0 = f64::from(u8::from(rng.random_bool(h)));
            let y1 = f64::from(u8::from(rng.random_bool(h + psi)));
            Unit {
                id,
                h,
                arrival,
                y0,
                y1,
                confounder: None,
            }
        })
        .collect();
    Cohort::new(units, tau, DgpTag::Bernoulli)
}

/// Partially linear cohort with endogenous (confounded) arrivals.
pub fn generate_bias_cohort(
    n: usize,
    tau: u32,
    psi: f64,
    law: &ScoreLaw,
    seed: u64,
) -> Result<Cohort, CohortError> {
    law.validate()?;
    let (lo, hi) = law.support();
    check_effect(lo, hi, psi)?;
    let h = draw_scores(n, law, seed)?;
    bias_cohort_from_scores(&h, tau, psi, seed)
}

/// Partially linear cohort on fixed scores.
///
/// The unit with the `r`-th largest confounder (1-based) arrives at
/// `tau * (r - 0.5) / n`.
pub fn bias_cohort_from_scores(
    h: &[f64],
    tau: u32,
    psi: f64,
    seed: u64,
) -> Result<Cohort, CohortError> {
    let (lo, hi) = score_bounds(h)?;
    check_effect(lo, hi, psi)?;
    let n = h.len();
    let mut rng = rng::stream(rng::derive_seed(seed, 0xB1A5), 0);
    let confounders: Vec<f64> = h
        .iter()
        .map(|&h| 0.2 * h * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confounders[b].total_cmp(&confounders[a]).then(a.cmp(&b)));
    let horizon = f64::from(tau);
    let mut arrival = vec![0.0; n];
    for (rank0, &i) in order.iter().enumerate() {
        arrival[i] = horizon * (rank0 as f64 + 0.5) / n as f64;
    }
    let units = (0..n)
        .map(|id| {
            let u = confounders[id];
            Unit {
                id,
                h: h[id],
                arrival: arrival[id],
                y0: h[id] + u,
                y1: psi + h[id] + u,
                confounder: Some(u),
            }
        })
        .collect();
    Cohort::new(units, tau, DgpTag::PartiallyLinear)
}
