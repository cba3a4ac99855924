use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::rng;

pub const DEFAULT_BOOTSTRAP_REPS: usize = 10_000;

/// Distribution of the perturbed statistic `mean(xi_i * phi_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub se: f64,
    /// 2.5% and 97.5% quantiles of the perturbed statistic.
    pub q_low: f64,
    pub q_high: f64,
    pub reps: usize,
}

impl BootstrapSummary {
    pub fn band(&self, point: f64) -> (f64, f64) {
        (point + self.q_low, point + self.q_high)
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(mut draws: Vec<f64>) -> BootstrapSummary {
    let reps = draws.len();
    let m = draws.iter().sum::<f64>() / reps as f64;
    let var = if reps > 1 {
        draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    draws.sort_by(f64::total_cmp);
    BootstrapSummary {
        se: var.sqrt(),
        q_low: quantile_sorted(&draws, 0.025),
        q_high: quantile_sorted(&draws, 0.975),
        reps,
    }
}

/// Gaussian multiplier bootstrap for a single statistic.
pub fn multiplier_bootstrap(influence: &[f64], reps: usize, seed: u64) -> BootstrapSummary {
    multiplier_bands(&[influence], reps, seed).pop().unwrap()
}

/// Pointwise bands for several statistics computed on the same units.
///
/// Every statistic sees the same multipliers in a given replicate.
pub fn multiplier_bands(influences: &[&[f64]], reps: usize, seed: u64) -> Vec<BootstrapSummary> {
    assert!(reps >= 1, "bootstrap needs at least one replicate");
    let n = influences.first().map_or(0, |phi| phi.len());
    assert!(
        influences.iter().all(|phi| phi.len() == n),
        "influence vectors differ in length"
    );
    let base = rng::derive_seed(seed, 0xB007);
    let draws: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(base, r as u64);
            let xi: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            influences
                .iter()
                .map(|phi| phi.iter().zip(&xi).map(|(p, x)| p * x).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();
    (0..influences.len())
        .map(|s| summarize(draws.iter().map(|d| d[s]).collect()))
        .collect()
}
