use std::path::Path;

use anyhow::{anyhow, bail, Result};
use queuerand::cohort::{bias_cohort_from_scores, generate_bias_cohort, DgpTag};
use queuerand::design::{feasible_utility_range, solve_design, DesignProblem, Objective};
use queuerand::estimation::{estimate_dr_ate, estimate_pliv, NuisanceSet, Sample};
use queuerand::mechanism::{allocate, sample_queues_with, PolicyMatrix, QueueSpec, ServiceMode};
use queuerand::propensity::{marginal_propensity, AlphaVector};
use queuerand::rng::{derive_seed, stream};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::{fmt_f64, write_csv};
use crate::sim;

pub const HEADER: [&str; 7] = [
    "alpha_config",
    "c_level",
    "estimator",
    "mean_bias",
    "mc_se",
    "replications",
    "status",
];

#[derive(Debug, Clone)]
pub struct BiasRow {
    pub alpha_config: String,
    pub c_level: f64,
    pub estimator: &'static str,
    pub mean_bias: f64,
    pub mc_se: f64,
    /// Replications with a usable estimate.
    pub replications: usize,
    pub status: String,
}

struct Cell {
    alpha_idx: usize,
    c_level: f64,
    estimator: &'static str,
    /// `Err` holds the status of a design that could not be built.
    policy: Result<PolicyMatrix, &'static str>,
    pi: Vec<f64>,
}

fn alpha_label(a: &[f64]) -> String {
    a.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join("/")
}

/// Mean bias of the exogenous DR estimator and the endogenous PLIV
/// estimator under endogenous arrivals, for each rationed alpha config and
/// utility level.
///
/// Scores are drawn once; every replication redraws the confounder,
/// arrivals, outcomes and queue assignments.
pub fn study(cfg: &RunConfig) -> Result<Vec<BiasRow>> {
    if cfg.cohort.dgp != DgpTag::PartiallyLinear {
        bail!("cohort.dgp: the bias study needs the partially_linear cohort");
    }
    let seed = cfg.execution.seed;
    let c = &cfg.cohort;
    let p = cfg.p();
    let beta = cfg.mechanism.beta;
    let h = generate_bias_cohort(c.n, c.tau, c.psi, &c.h_law, seed)
        .map_err(|e| anyhow!("cohort: {e}"))?
        .scores();

    let configs = &cfg.alpha_configs()?;
    let mut alphas = Vec::new();
    let mut specs = Vec::new();
    for a in configs {
        alphas.push(AlphaVector::custom(a.clone(), beta, &p).map_err(|e| anyhow!("mechanism.alpha_configs: {e}"))?);
        specs.push(
            cfg.queue_spec(c.n, ServiceMode::Rationed { alpha_target: a.clone() })
                .map_err(|e| anyhow!("mechanism: {e}"))?,
        );
    }

    // Utility levels shared by every alpha config.
    let c_rct = beta * h.iter().sum::<f64>() / h.len() as f64;
    let c_top = alphas
        .iter()
        .map(|a| feasible_utility_range(&h, a).1)
        .fold(f64::INFINITY, f64::min);
    let levels: Vec<f64> = cfg
        .design
        .bias_levels
        .iter()
        .map(|f| c_rct + f * (c_top - c_rct))
        .collect();

    let mut cells = Vec::new();
    for (ai, alpha) in alphas.iter().enumerate() {
        for &level in &levels {
            for (objective, estimator) in [
                (Objective::Exogenous, "dr_exogenous"),
                (Objective::Endogenous, "pliv_endogenous"),
            ] {
                let policy = DesignProblem::new(h.clone(), alpha.clone(), level, objective)
                    .and_then(|mut prob| {
                        prob.regularizer = cfg.design.regularizer;
                        if let Some(k) = cfg.design.kappa {
                            prob.kappa = k;
                        }
                        solve_design(&prob, None)
                    })
                    .map(|s| s.policy)
                    .map_err(|e| sim::design_status(&e));
                let pi = match &policy {
                    Ok(pm) => pm.rows().map(|r| marginal_propensity(r, alpha)).collect(),
                    Err(_) => Vec::new(),
                };
                cells.push(Cell {
                    alpha_idx: ai,
                    c_level: level,
                    estimator,
                    policy,
                    pi,
                });
            }
        }
    }

    let nuisances = NuisanceSet::oracle(DgpTag::PartiallyLinear, c.psi).with_sigma_floor(cfg.estimation.sigma_floor);
    let reps = cfg.execution.mc_replications;
    let cohort_seed = derive_seed(seed, 0xB1A5);
    let queue_seed = derive_seed(seed, 0x0B1A);
    let draws: Vec<Vec<Option<f64>>> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<f64>>> {
            let cohort = bias_cohort_from_scores(&h, c.tau, c.psi, derive_seed(cohort_seed, r as u64))
                .map_err(|e| anyhow!("cohort: {e}"))?;
            let mut rng = stream(queue_seed, r as u64);
            cells
                .iter()
                .map(|cell| {
                    let Ok(policy) = &cell.policy else {
                        return Ok(None);
                    };
                    replicate(cfg, &cohort, policy, &specs[cell.alpha_idx], &alphas[cell.alpha_idx], cell, &nuisances, &mut rng)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let rows = cells
        .iter()
        .enumerate()
        .map(|(j, cell)| {
            let vals: Vec<f64> = draws.iter().filter_map(|d| d[j]).collect();
            let m = vals.len();
            let (mean, se) = if m >= 2 {
                let mean = vals.iter().sum::<f64>() / m as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                (mean, (var / m as f64).sqrt())
            } else {
                (f64::NAN, f64::NAN)
            };
            let status = match &cell.policy {
                Err(s) => s.to_string(),
                Ok(_) if m == reps => "ok".into(),
                Ok(_) if m >= 2 => "partial".into(),
                Ok(_) => "estimator_failed".into(),
            };
            BiasRow {
                alpha_config: alpha_label(&configs[cell.alpha_idx]),
                c_level: cell.c_level,
                estimator: cell.estimator,
                mean_bias: mean,
                mc_se: se,
                replications: m,
                status,
            }
        })
        .collect();
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn replicate<R: rand::Rng + ?Sized>(
    cfg: &RunConfig,
    cohort: &queuerand::cohort::Cohort,
    policy: &PolicyMatrix,
    spec: &QueueSpec,
    alpha: &AlphaVector,
    cell: &Cell,
    nuisances: &NuisanceSet,
    rng: &mut R,
) -> Result<Option<f64>> {
    let queues = sample_queues_with(policy, rng);
    let trace = allocate(cohort, &queues, spec)?;
    let sample = Sample::from_trace(cohort, &trace).map_err(|e| anyhow!("{e}"))?;
    let est = match cell.estimator {
        "dr_exogenous" => estimate_dr_ate(&sample, &cell.pi, nuisances, cfg.estimation.gamma),
        _ => estimate_pliv(&sample, policy, alpha, nuisances, cfg.estimation.relevance_floor),
    };
    Ok(est.ok().map(|e| e.report.point - cfg.cohort.psi))
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = study(cfg)?
        .iter()
        .map(|r| {
            vec![
                r.alpha_config.clone(),
                fmt_f64(r.c_level),
                r.estimator.to_string(),
                fmt_f64(r.mean_bias),
                fmt_f64(r.mc_se),
                r.replications.to_string(),
                r.status.clone(),
            ]
        })
        .collect();
    write_csv(&out.join("bias.csv"), &HEADER, &rows)
}
