use std::path::Path;

use anyhow::{anyhow, Result};
use queuerand::cohort::generate_cohort;
use queuerand::mechanism::{
    allocate, mc_propensities, sample_queues, treated_mass_profile, McOptions, PolicyMatrix, ServiceMode,
};
use queuerand::rng::derive_seed;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::{fmt_f64, write_csv};

pub const HEADER: [&str; 7] = [
    "n",
    "k",
    "mc_pi_tilde",
    "alpha_formula",
    "abs_dev",
    "treated_mass",
    "lemma3_limit",
];

#[derive(Debug, Clone)]
pub struct PropensityRow {
    pub n: usize,
    /// 1-based queue index.
    pub k: usize,
    pub mc_pi_tilde: f64,
    pub alpha_formula: f64,
    pub abs_dev: f64,
    pub treated_mass: f64,
    pub lemma3_limit: f64,
}

/// Forced-queue Monte Carlo propensities and treated-mass profiles of the RCT
/// policy, against their limits, over the configured cohort sizes.
pub fn convergence(cfg: &RunConfig) -> Result<Vec<PropensityRow>> {
    if !matches!(cfg.service_mode(), ServiceMode::Strict) {
        return Err(anyhow!("mechanism.mode: the propensity check runs under strict service"));
    }
    let seed = cfg.execution.seed;
    let c = &cfg.cohort;
    let p = cfg.p();
    let alpha = cfg.alpha().map_err(|e| anyhow!("mechanism.alpha: {e}"))?;
    let mut rows = Vec::new();
    for &n in &cfg.execution.n_grid {
        let cohort_seed = derive_seed(seed, n as u64);
        let cohort = generate_cohort(n, c.tau, c.psi, &c.h_law, cohort_seed).map_err(|e| anyhow!("cohort: {e}"))?;
        let policy = PolicyMatrix::uniform(n, &p)?;
        let spec = cfg.queue_spec(n, ServiceMode::Strict).map_err(|e| anyhow!("mechanism: {e}"))?;
        let table = mc_propensities(
            &cohort,
            &policy,
            &spec,
            &McOptions {
                reps: cfg.execution.mc_replications,
                arrival_resampling: true,
                forced_queue: true,
                seed: derive_seed(cohort_seed, 0x7AB1),
                max_simulations: u64::MAX,
            },
        )?;

        let mass_seed = derive_seed(cohort_seed, 0x3A55);
        let profiles: Vec<Vec<f64>> = (0..cfg.execution.mass_replications)
            .into_par_iter()
            .map(|r| -> Result<Vec<f64>> {
                let s = derive_seed(mass_seed, r as u64);
                let fresh = generate_cohort(n, c.tau, c.psi, &c.h_law, s).map_err(|e| anyhow!("cohort: {e}"))?;
                let trace = allocate(&fresh, &sample_queues(&policy, s), &spec)?;
                let last = spec.tau() as usize - 1;
                Ok(treated_mass_profile(&trace, &spec).iter().map(|row| row[last]).collect())
            })
            .collect::<Result<_>>()?;

        let mut limit = 0.0;
        for k in 0..p.len() {
            let pi_tilde = (0..n)
                .map(|i| table.queue_conditional(i, k).unwrap_or(f64::NAN))
                .sum::<f64>()
                / n as f64;
            let mass = profiles.iter().map(|m| m[k]).sum::<f64>() / profiles.len() as f64;
            limit += alpha.get(k) * p[k];
            rows.push(PropensityRow {
                n,
                k: k + 1,
                mc_pi_tilde: pi_tilde,
                alpha_formula: alpha.get(k),
                abs_dev: (pi_tilde - alpha.get(k)).abs(),
                treated_mass: mass,
                lemma3_limit: limit,
            });
        }
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = convergence(cfg)?
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.k.to_string(),
                fmt_f64(r.mc_pi_tilde),
                fmt_f64(r.alpha_formula),
                fmt_f64(r.abs_dev),
                fmt_f64(r.treated_mass),
                fmt_f64(r.lemma3_limit),
            ]
        })
        .collect();
    write_csv(&out.join("propensity.csv"), &HEADER, &rows)
}
