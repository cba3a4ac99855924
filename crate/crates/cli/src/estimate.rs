use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use queuerand::design::{rct_policy, solve_design, DesignProblem};
use queuerand::estimation::{
    fit_nuisances, multiplier_bootstrap, EstimationInput, EstimatorRegistry, NuisanceSet, Sample,
};
use queuerand::mechanism::{allocate, mc_propensities, sample_queues, McOptions, PolicyMatrix, PropensityTable};
use queuerand::rng::derive_seed;

use crate::config::{IntervalMethod, PropensityMethod, RunConfig};
use crate::output::{fmt_f64, write_csv};
use crate::sim;

pub const HEADER: [&str; 8] = ["method", "point", "se", "ci_low", "ci_high", "n", "seed", "status"];

#[derive(Debug, Clone)]
pub struct EstimateRow {
    pub method: String,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub seed: u64,
    pub status: String,
}

/// Reads `h,queue,treated,y` rows; queues are 1-based.
pub fn read_trace(path: &Path) -> Result<Sample> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read trace {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("trace {} lacks column {name:?}", path.display()))
    };
    let (ih, iq, iz, iy) = (col("h")?, col("queue")?, col("treated")?, col("y")?);
    let (mut h, mut q, mut z, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let row = line + 2;
        h.push(field(ih).parse::<f64>().with_context(|| format!("trace row {row}: bad h"))?);
        let queue: usize = field(iq).parse().with_context(|| format!("trace row {row}: bad queue"))?;
        if queue == 0 {
            bail!("trace row {row}: queues are numbered from 1");
        }
        q.push(queue - 1);
        z.push(match field(iz).as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => bail!("trace row {row}: treated must be 0 or 1, got {other:?}"),
        });
        y.push(field(iy).parse::<f64>().with_context(|| format!("trace row {row}: bad y"))?);
    }
    Sample::new(h, z, y, q).map_err(|e| anyhow!("trace: {e}"))
}

/// Design used for a realization on scores `u`: the optimized design at
/// `design.c` when set, else the RCT.
fn policy_for(cfg: &RunConfig, u: &[f64]) -> Result<std::result::Result<PolicyMatrix, &'static str>> {
    let alpha = cfg.alpha().map_err(|e| anyhow!("mechanism.alpha: {e}"))?;
    let Some(c) = cfg.design.c else {
        return Ok(Ok(rct_policy(u.len(), alpha.p())));
    };
    let problem = DesignProblem::new(u.to_vec(), alpha, c, cfg.design.objective).and_then(|mut p| {
        p.regularizer = cfg.design.regularizer;
        if let Some(k) = cfg.design.kappa {
            p.kappa = k;
        }
        solve_design(&p, None)
    });
    Ok(problem.map(|s| s.policy).map_err(|e| sim::design_status(&e)))
}

pub fn estimates(cfg: &RunConfig) -> Result<Vec<EstimateRow>> {
    let seed = cfg.execution.seed;
    let alpha = cfg.alpha().map_err(|e| anyhow!("mechanism.alpha: {e}"))?;
    let e = &cfg.estimation;

    let (sample, policy, table): (Sample, _, Option<PropensityTable>) = match &e.trace {
        Some(path) => {
            let sample = read_trace(path)?;
            let policy = policy_for(cfg, &sample.h)?;
            (sample, policy, None)
        }
        None => {
            let cohort = sim::cohort(cfg, cfg.cohort.n, seed)?;
            let policy = policy_for(cfg, &cohort.scores())?;
            let Ok(pm) = &policy else {
                return Ok(failed_rows(cfg, cfg.cohort.n, policy.unwrap_err()));
            };
            let spec = cfg
                .queue_spec(cohort.n(), cfg.service_mode())
                .map_err(|e| anyhow!("mechanism: {e}"))?;
            let queues = sample_queues(pm, derive_seed(seed, 0xE571));
            let trace = allocate(&cohort, &queues, &spec)?;
            let table = match e.propensity {
                PropensityMethod::Asymptotic => None,
                PropensityMethod::MonteCarlo => Some(mc_propensities(
                    &cohort,
                    pm,
                    &spec,
                    &McOptions {
                        reps: cfg.execution.mc_replications,
                        seed: derive_seed(seed, 0x7AB1),
                        max_simulations: u64::MAX,
                        ..McOptions::default()
                    },
                )?),
            };
            (Sample::from_trace(&cohort, &trace)?, policy, table)
        }
    };
    let n = sample.n();
    let policy = match policy {
        Ok(p) => p,
        Err(status) => return Ok(failed_rows(cfg, n, status)),
    };
    if policy.k() != alpha.k() {
        bail!("mechanism.k: design has {} queues, alpha has {}", policy.k(), alpha.k());
    }
    if let Some(q) = sample.q.iter().find(|&&q| q >= alpha.k()) {
        bail!("trace: queue {} exceeds mechanism.k = {}", q + 1, alpha.k());
    }

    let nuisances = match sim::fit_method(cfg) {
        None => Ok(NuisanceSet::oracle(cfg.cohort.dgp, cfg.cohort.psi).with_sigma_floor(e.sigma_floor)),
        Some(m) => fit_nuisances(&sample, m, e.sigma_floor),
    };
    let nuisances = match nuisances {
        Ok(ns) => ns,
        Err(err) => return Ok(failed_rows(cfg, n, sim::estimation_status(&err))),
    };

    let input = EstimationInput {
        sample: &sample,
        policy: &policy,
        alpha: &alpha,
        nuisances: &nuisances,
        table: table.as_ref(),
        gamma: e.gamma,
        relevance_floor: e.relevance_floor,
    };
    let registry = EstimatorRegistry::default();
    let mut rows = Vec::new();
    for (idx, name) in e.estimators.iter().enumerate() {
        let est = registry.get(name).expect("validated estimator name");
        let row = match est.estimate(&input) {
            Ok(mut out) => {
                if e.interval == IntervalMethod::Bootstrap {
                    let boot = multiplier_bootstrap(&out.influence, e.bootstrap_reps, derive_seed(seed, idx as u64));
                    out = out.with_bootstrap(&boot);
                }
                let r = out.report;
                EstimateRow {
                    method: name.clone(),
                    point: r.point,
                    se: r.se,
                    ci_low: r.ci_low,
                    ci_high: r.ci_high,
                    n,
                    seed,
                    status: "ok".into(),
                }
            }
            Err(err) => failed_row(name, n, seed, sim::estimation_status(&err)),
        };
        rows.push(row);
    }
    Ok(rows)
}

fn failed_row(method: &str, n: usize, seed: u64, status: &str) -> EstimateRow {
    EstimateRow {
        method: method.into(),
        point: f64::NAN,
        se: f64::NAN,
        ci_low: f64::NAN,
        ci_high: f64::NAN,
        n,
        seed,
        status: status.into(),
    }
}

fn failed_rows(cfg: &RunConfig, n: usize, status: &str) -> Vec<EstimateRow> {
    cfg.estimation
        .estimators
        .iter()
        .map(|m| failed_row(m, n, cfg.execution.seed, status))
        .collect()
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = estimates(cfg)?
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                fmt_f64(r.point),
                fmt_f64(r.se),
                fmt_f64(r.ci_low),
                fmt_f64(r.ci_high),
                r.n.to_string(),
                r.seed.to_string(),
                r.status.clone(),
            ]
        })
        .collect();
    write_csv(&out.join("estimates.csv"), &HEADER, &rows)
}
