use std::path::Path;

use anyhow::{anyhow, Result};
use queuerand::design::{
    default_floor_grid, sweep_strategy, FrontierPoint, Objective, StrategyContext, StrategyRegistry, VarianceModel,
};
use queuerand::estimation::multiplier_bands;
use queuerand::rng::derive_seed;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::{fmt_f64, write_csv};
use crate::sim;

pub const FRONTIER_HEADER: [&str; 8] = [
    "method",
    "c_or_param",
    "achieved_utility",
    "variance_proxy",
    "band_low",
    "band_high",
    "design_objective",
    "status",
];

pub const BANDS_HEADER: [&str; 7] = [
    "method",
    "c_or_param",
    "variance_proxy",
    "boot_se",
    "band_low",
    "band_high",
    "bootstrap_reps",
];

#[derive(Debug, Clone)]
pub struct FrontierRow {
    pub method: &'static str,
    pub param: f64,
    pub achieved_utility: f64,
    pub variance_proxy: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub boot_se: f64,
    pub design_objective: f64,
    pub status: &'static str,
}

fn status(pt: &FrontierPoint) -> &'static str {
    if let Some(e) = &pt.error {
        return sim::design_status(e);
    }
    if let Err(e) = &pt.variance {
        return sim::estimation_status(e);
    }
    match &pt.solution {
        Some(s) if !s.converged => "not_converged",
        _ => "ok",
    }
}

/// Traces every configured strategy on one synthetic cohort.
pub fn frontier(cfg: &RunConfig) -> Result<Vec<FrontierRow>> {
    let seed = cfg.execution.seed;
    let cohort = sim::cohort(cfg, cfg.cohort.n, seed)?;
    let u = cohort.scores();
    let alpha = cfg.alpha().map_err(|e| anyhow!("mechanism.alpha: {e}"))?;
    let nuisances = sim::design_nuisances(cfg, &cohort, seed).map_err(|e| anyhow!("nuisances: {e}"))?;
    let model = VarianceModel {
        nuisances,
        h: u.clone(),
    };
    let registry = StrategyRegistry::default();
    let d = &cfg.design;

    let sweeps: Vec<(&'static str, Vec<FrontierPoint>)> = d
        .strategies
        .par_iter()
        .map(|name| {
            let strategy = registry.get(name).expect("validated strategy name");
            let objective = match strategy.name() {
                "optimized_exogenous" => Objective::Exogenous,
                "optimized_endogenous" => Objective::Endogenous,
                _ => d.objective,
            };
            let mut ctx = StrategyContext::new(&u, &alpha, objective);
            ctx.regularizer = d.regularizer;
            ctx.kappa = d.kappa;
            ctx.softmax_cap = d.softmax_cap;
            let grid = match strategy.name() {
                "optimized_exogenous" | "optimized_endogenous" => d
                    .c_grid
                    .clone()
                    .unwrap_or_else(|| default_floor_grid(&u, &alpha, d.grid_points)),
                "switch" => d.switch_grid.clone().unwrap_or_else(|| strategy.default_grid(&ctx)),
                "greedy_softmax" => d.softmax_grid.clone().unwrap_or_else(|| strategy.default_grid(&ctx)),
                _ => strategy.default_grid(&ctx),
            };
            (strategy.name(), sweep_strategy(strategy, &ctx, &grid, &model))
        })
        .collect();

    let influences: Vec<&[f64]> = sweeps
        .iter()
        .flat_map(|(_, pts)| pts.iter())
        .filter_map(|pt| pt.variance.as_ref().ok().map(|(_, infl)| infl.as_slice()))
        .collect();
    let reps = cfg.estimation.bootstrap_reps;
    let mut bands = if reps > 0 && !influences.is_empty() {
        multiplier_bands(&influences, reps, derive_seed(seed, 0xBA4D)).into_iter()
    } else {
        Vec::new().into_iter()
    };

    let mut rows = Vec::new();
    for (method, pts) in &sweeps {
        for pt in pts {
            let (v, lo, hi, se) = match &pt.variance {
                Ok((v, _)) => match bands.next() {
                    Some(b) => {
                        let (lo, hi) = b.band(*v);
                        (*v, lo, hi, b.se)
                    }
                    None => (*v, f64::NAN, f64::NAN, f64::NAN),
                },
                Err(_) => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            };
            rows.push(FrontierRow {
                method,
                param: pt.param,
                achieved_utility: pt.achieved_utility,
                variance_proxy: v,
                band_low: lo,
                band_high: hi,
                boot_se: se,
                design_objective: pt.design_objective,
                status: status(pt),
            });
        }
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = frontier(cfg)?;
    let frontier: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                fmt_f64(r.param),
                fmt_f64(r.achieved_utility),
                fmt_f64(r.variance_proxy),
                fmt_f64(r.band_low),
                fmt_f64(r.band_high),
                fmt_f64(r.design_objective),
                r.status.to_string(),
            ]
        })
        .collect();
    let bands: Vec<Vec<String>> = rows
        .iter()
        .filter(|r| r.variance_proxy.is_finite())
        .map(|r| {
            vec![
                r.method.to_string(),
                fmt_f64(r.param),
                fmt_f64(r.variance_proxy),
                fmt_f64(r.boot_se),
                fmt_f64(r.band_low),
                fmt_f64(r.band_high),
                cfg.estimation.bootstrap_reps.to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("frontier.csv"), &FRONTIER_HEADER, &frontier)?;
    write_csv(&out.join("bands.csv"), &BANDS_HEADER, &bands)
}
