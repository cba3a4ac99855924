use rand::Rng;
use rayon::prelude::*;

use super::allocate::{arrival_period, ServiceCounts};
use super::policy::{sample_queues_with, PolicyMatrix};
use super::spec::QueueSpec;
use super::MechanismError;
use crate::cohort::Cohort;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropensitySource {
    Asymptotic,
    MonteCarlo { reps: usize },
    Exact,
}

/// Queue-conditional and marginal treatment probabilities for every unit.
///
/// A cell is `None` when an unforced Monte Carlo run never placed the unit
/// in that queue.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityTable {
    k: usize,
    queue_conditional: Vec<Option<f64>>,
    marginal: Vec<f64>,
    /// Number of simulations behind each cell (Monte Carlo sources only).
    trials: Option<Vec<u64>>,
    source: PropensitySource,
}

impl PropensityTable {
    pub fn new(
        k: usize,
        queue_conditional: Vec<Option<f64>>,
        marginal: Vec<f64>,
        source: PropensitySource,
    ) -> Result<Self, MechanismError> {
        if k == 0 || queue_conditional.len() != marginal.len() * k {
            return Err(MechanismError::Invalid("propensity table shape mismatch".into()));
        }
        Ok(PropensityTable {
            k,
            queue_conditional,
            marginal,
            trials: None,
            source,
        })
    }

    pub fn n(&self) -> usize {
        self.marginal.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn source(&self) -> PropensitySource {
        self.source
    }

    pub fn queue_conditional(&self, i: usize, k: usize) -> Option<f64> {
        self.queue_conditional[i * self.k + k]
    }

    pub fn marginal(&self, i: usize) -> f64 {
        self.marginal[i]
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginal
    }

    /// Binomial standard error of a Monte Carlo cell.
    pub fn mc_standard_error(&self, i: usize, k: usize) -> Option<f64> {
        let trials = self.trials.as_ref()?[i * self.k + k];
        let p = self.queue_conditional(i, k)?;
        (trials > 0).then(|| (p * (1.0 - p) / trials as f64).sqrt())
    }

    /// Number of cells with no Monte Carlo hits.
    pub fn absent_cells(&self) -> usize {
        self.queue_conditional.iter().filter(|c| c.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub reps: usize,
    /// Redraw arrivals iid uniform on `[0, tau]` in each replicate.
    pub arrival_resampling: bool,
    /// Pin each unit to each queue in turn instead of conditioning on draws.
    pub forced_queue: bool,
    pub seed: u64,
    /// Upper bound on `n * K * reps` in forced mode.
    pub max_simulations: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            reps: 200,
            arrival_resampling: true,
            forced_queue: true,
            seed: 0,
            max_simulations: 50_000_000,
        }
    }
}

/// Monte Carlo estimate of the propensity table.
pub fn mc_propensities(
    cohort: &Cohort,
    policy: &PolicyMatrix,
    spec: &QueueSpec,
    opts: &McOptions,
) -> Result<PropensityTable, MechanismError> {
    let (n, k) = (cohort.n(), spec.k());
    if opts.reps == 0 {
        return Err(MechanismError::Domain("at least one replication is required".into()));
    }
    if policy.n() != n || policy.k() != k {
        return Err(MechanismError::Invalid(format!(
            "policy is {}x{}, mechanism expects {n}x{k}",
            policy.n(),
            policy.k()
        )));
    }
    if cohort.tau() != spec.tau() {
        return Err(MechanismError::Invalid("cohort horizon differs from budget periods".into()));
    }
    let sims = (n as u64).saturating_mul(k as u64).saturating_mul(opts.reps as u64);
    if opts.forced_queue && sims > opts.max_simulations {
        return Err(MechanismError::TooLarge(format!(
            "forced-queue Monte Carlo needs n*K*reps = {sims} simulations, cap is {}",
            opts.max_simulations
        )));
    }

    let zero = || Tally {
        hits: vec![0; n * k],
        treated: vec![0; n * k],
        marginal: vec![0; n],
    };
    let tally = (0..opts.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(opts.seed, r as u64);
            replicate(cohort, policy, spec, opts, &mut rng)
        })
        .reduce(zero, Tally::merge);

    let reps = opts.reps as f64;
    let queue_conditional: Vec<Option<f64>> = tally
        .hits
        .iter()
        .zip(&tally.treated)
        .map(|(&h, &t)| (h > 0).then(|| t as f64 / h as f64))
        .collect();
    let marginal = if opts.forced_queue {
        (0..n)
            .map(|i| {
                policy
                    .row(i)
                    .iter()
                    .enumerate()
                    .map(|(q, w)| w * queue_conditional[i * k + q].unwrap_or(0.0))
                    .sum()
            })
            .collect()
    } else {
        tally.marginal.iter().map(|&t| t as f64 / reps).collect()
    };
    Ok(PropensityTable {
        k,
        queue_conditional,
        marginal,
        trials: Some(tally.hits),
        source: PropensitySource::MonteCarlo { reps: opts.reps },
    })
}

struct Tally {
    hits: Vec<u64>,
    treated: Vec<u64>,
    marginal: Vec<u64>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.hits.iter_mut().zip(other.hits) {
            *a += b;
        }
        for (a, b) in self.treated.iter_mut().zip(other.treated) {
            *a += b;
        }
        for (a, b) in self.marginal.iter_mut().zip(other.marginal) {
            *a += b;
        }
        self
    }
}

fn replicate<R: Rng>(
    cohort: &Cohort,
    policy: &PolicyMatrix,
    spec: &QueueSpec,
    opts: &McOptions,
    rng: &mut R,
) -> Tally {
    let (n, k, tau) = (cohort.n(), spec.k(), spec.tau() as usize);
    let queues = sample_queues_with(policy, rng);
    let arrivals: Vec<f64> = if opts.arrival_resampling {
        let horizon = f64::from(spec.tau());
        (0..n).map(|_| horizon * rng.random::<f64>()).collect()
    } else {
        cohort.arrivals()
    };

    // Per-queue arrival order, keyed by (arrival, id).
    let mut lines: Vec<Vec<(f64, usize)>> = vec![Vec::new(); k];
    for (i, &q) in queues.iter().enumerate() {
        lines[q].push((arrivals[i], i));
    }
    for line in &mut lines {
        line.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    let mut arrived = vec![0u64; tau * k];
    for (i, &q) in queues.iter().enumerate() {
        for t in (arrival_period(arrivals[i]) as usize - 1)..tau {
            arrived[t * k + q] += 1;
        }
    }

    let mut tally = Tally {
        hits: vec![0; n * k],
        treated: vec![0; n * k],
        marginal: vec![0; n],
    };
    if opts.forced_queue {
        let mut others = arrived.clone();
        for i in 0..n {
            let period = arrival_period(arrivals[i]);
            let own = queues[i];
            for t in (period as usize - 1)..tau {
                others[t * k + own] -= 1;
            }
            let counts = ServiceCounts::run(&others, spec);
            for q in 0..k {
                let ahead = lines[q].partition_point(|&(a, j)| a < arrivals[i] || (a == arrivals[i] && j < i)) as u64;
                tally.hits[i * k + q] += 1;
                if counts.probe(&others, spec, q, period, ahead).is_some() {
                    tally.treated[i * k + q] += 1;
                }
            }
            for t in (period as usize - 1)..tau {
                others[t * k + own] += 1;
            }
        }
        // Realized status as well, for the unforced marginal.
        let counts = ServiceCounts::run(&arrived, spec);
        mark_realized(&lines, &counts, &mut tally.marginal);
    } else {
        let counts = ServiceCounts::run(&arrived, spec);
        mark_realized(&lines, &counts, &mut tally.marginal);
        for i in 0..n {
            tally.hits[i * k + queues[i]] += 1;
            tally.treated[i * k + queues[i]] += tally.marginal[i];
        }
    }
    tally
}

fn mark_realized(lines: &[Vec<(f64, usize)>], counts: &ServiceCounts, out: &mut [u64]) {
    for (q, line) in lines.iter().enumerate() {
        for &(_, i) in line.iter().take(counts.served_total(q) as usize) {
            out[i] = 1;
        }
    }
}
