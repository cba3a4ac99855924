use crate::cohort::Cohort;

use super::spec::{QueueSpec, ServiceMode};
use super::MechanismError;

/// One realization of the mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationTrace {
    pub queues: Vec<usize>,
    pub treated: Vec<bool>,
    /// 1-based period in which the unit was treated.
    pub treat_period: Vec<Option<u32>>,
}

impl AllocationTrace {
    pub fn n(&self) -> usize {
        self.queues.len()
    }

    pub fn treated_in_period(&self, t: u32) -> usize {
        self.treat_period.iter().filter(|&&p| p == Some(t)).count()
    }
}

/// First period `t` (1-based) with `arrival <= t`.
pub(crate) fn arrival_period(arrival: f64) -> u32 {
    (arrival.ceil() as u32).max(1)
}

/// Runs the mechanism on fixed arrivals and queues.
///
/// Strict mode serves eligible units in (queue, arrival, id) order each period
/// until the budget is spent; rationed mode serves each queue FIFO from its own
/// share. Unused budget is discarded.
pub fn allocate(
    cohort: &Cohort,
    queues: &[usize],
    spec: &QueueSpec,
) -> Result<AllocationTrace, MechanismError> {
    let n = cohort.n();
    if queues.len() != n {
        return Err(MechanismError::Invalid(format!("{} queues for {n} units", queues.len())));
    }
    if let Some(&q) = queues.iter().find(|&&q| q >= spec.k()) {
        return Err(MechanismError::Invalid(format!("queue index {q} out of range for K = {}", spec.k())));
    }
    if cohort.tau() != spec.tau() {
        return Err(MechanismError::Invalid(format!(
            "cohort horizon {} differs from {} budget periods",
            cohort.tau(),
            spec.tau()
        )));
    }
    let units = cohort.units();
    let mut lines: Vec<Vec<usize>> = vec![Vec::new(); spec.k()];
    for (i, &q) in queues.iter().enumerate() {
        lines[q].push(i);
    }
    for line in &mut lines {
        line.sort_by(|&a, &b| units[a].arrival.total_cmp(&units[b].arrival).then(a.cmp(&b)));
    }

    let mut treat_period = vec![None; n];
    let mut served = vec![0usize; spec.k()];
    let mut arrived = vec![0usize; spec.k()];
    for t in 1..=spec.tau() {
        let cutoff = f64::from(t);
        let mut budget = spec.budgets()[t as usize - 1];
        for (k, line) in lines.iter().enumerate() {
            while arrived[k] < line.len() && units[line[arrived[k]]].arrival <= cutoff {
                arrived[k] += 1;
            }
            let waiting = (arrived[k] - served[k]) as u64;
            let take = match spec.mode() {
                ServiceMode::Strict => {
                    let take = waiting.min(budget);
                    budget -= take;
                    take
                }
                ServiceMode::Rationed { .. } => waiting.min(spec.share(t as usize - 1, k)),
            } as usize;
            for &i in &line[served[k]..served[k] + take] {
                treat_period[i] = Some(t);
            }
            served[k] += take;
        }
    }
    Ok(AllocationTrace {
        queues: queues.to_vec(),
        treated: treat_period.iter().map(Option::is_some).collect(),
        treat_period,
    })
}

/// `T[k][t] = (1/n) #{i : Q_i <= k, T_i <= t}` for 0-based `k` and `t`.
pub fn treated_mass_profile(trace: &AllocationTrace, spec: &QueueSpec) -> Vec<Vec<f64>> {
    let (k_max, tau) = (spec.k(), spec.tau() as usize);
    let mut counts = vec![vec![0.0; tau]; k_max];
    for (q, p) in trace.queues.iter().zip(&trace.treat_period) {
        if let Some(p) = p {
            counts[*q][*p as usize - 1] += 1.0;
        }
    }
    let n = trace.n() as f64;
    let mut out = vec![vec![0.0; tau]; k_max];
    for k in 0..k_max {
        for t in 0..tau {
            let below = if k > 0 { out[k - 1][t] } else { 0.0 };
            let before = if t > 0 { out[k][t - 1] } else { 0.0 };
            let diag = if k > 0 && t > 0 { out[k - 1][t - 1] } else { 0.0 };
            out[k][t] = below + before - diag + counts[k][t] / n;
        }
    }
    out
}

/// Queue-level view of the mechanism.
///
/// Under either service mode the treated set of a queue is a prefix of its
/// arrival order, so the whole allocation is a function of the counts
/// `arrived[t][k]` of units in queue `k` that have arrived by period `t + 1`.
/// This is what makes forced-queue Monte Carlo affordable.
#[derive(Debug, Clone)]
pub struct ServiceCounts {
    k: usize,
    tau: usize,
    /// `served_before[t][k]`: units of queue `k` served in periods before `t + 1`.
    served_before: Vec<u64>,
}

impl ServiceCounts {
    /// `arrived` is `tau x k`, row-major.
    pub fn run(arrived: &[u64], spec: &QueueSpec) -> Self {
        let (k_max, tau) = (spec.k(), spec.tau() as usize);
        debug_assert_eq!(arrived.len(), k_max * tau);
        let mut served_before = vec![0u64; (tau + 1) * k_max];
        for t in 0..tau {
            let mut budget = spec.budgets()[t];
            for k in 0..k_max {
                let done = served_before[t * k_max + k];
                let waiting = arrived[t * k_max + k] - done;
                let take = match spec.mode() {
                    ServiceMode::Strict => {
                        let take = waiting.min(budget);
                        budget -= take;
                        take
                    }
                    ServiceMode::Rationed { .. } => waiting.min(spec.share(t, k)),
                };
                served_before[(t + 1) * k_max + k] = done + take;
            }
        }
        ServiceCounts {
            k: k_max,
            tau,
            served_before,
        }
    }

    /// Units of queue `k` served by the end of the horizon.
    pub fn served_total(&self, k: usize) -> u64 {
        self.served_before[self.tau * self.k + k]
    }

    /// Treatment status of a unit placed in queue `k`, arriving in `period`
    /// (1-based), with `ahead_in_queue` earlier arrivals in that queue, given
    /// that these counts describe every *other* unit. Returns the period of
    /// treatment.
    ///
    /// Units ahead of the probe in priority order never see it, so their
    /// service history is the same with or without the probe.
    pub fn probe(
        &self,
        arrived_others: &[u64],
        spec: &QueueSpec,
        k: usize,
        period: u32,
        ahead_in_queue: u64,
    ) -> Option<u32> {
        for t in (period as usize - 1)..self.tau {
            let row = t * self.k;
            let in_queue = ahead_in_queue.saturating_sub(self.served_before[row + k]);
            let treated = match spec.mode() {
                ServiceMode::Strict => {
                    let higher: u64 = (0..k)
                        .map(|q| arrived_others[row + q] - self.served_before[row + q])
                        .sum();
                    higher + in_queue < spec.budgets()[t]
                }
                ServiceMode::Rationed { .. } => in_queue < spec.share(t, k),
            };
            if treated {
                return Some(t as u32 + 1);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{DgpTag, Unit};
    use crate::mechanism::{sample_queues, PolicyMatrix};
    use crate::rng;
    use rand::Rng;

    pub(crate) fn cohort_with(arrivals: &[f64], tau: u32) -> Cohort {
        let units = arrivals
            .iter()
            .enumerate()
            .map(|(id, &arrival)| Unit {
                id,
                h: 0.5,
                arrival,
                y0: 0.0,
                y1: 1.0,
                confounder: None,
            })
            .collect();
        Cohort::new(units, tau, DgpTag::Bernoulli).unwrap()
    }

    fn strict(k: usize, budgets: Vec<i64>) -> QueueSpec {
        QueueSpec::new(vec![1.0 / k as f64; k], 0.5, budgets, ServiceMode::Strict).unwrap()
    }

    #[test]
    fn priority_queue_served_first() {
        let c = cohort_with(&[0.1, 0.2, 0.3, 0.4], 1);
        let tr = allocate(&c, &[1, 0, 1, 0], &strict(2, vec![2])).unwrap();
        assert_eq!(tr.treated, vec![false, true, false, true]);
    }

    #[test]
    fn fifo_across_periods() {
        let c = cohort_with(&[0.5, 0.7, 1.5, 1.8], 2);
        let tr = allocate(&c, &[0, 0, 0, 0], &strict(1, vec![1, 1])).unwrap();
        assert_eq!(tr.treated, vec![true, true, false, false]);
        assert_eq!(tr.treat_period, vec![Some(1), Some(2), None, None]);
    }

    #[test]
    fn unconstrained_budget_treats_everyone() {
        let c = cohort_with(&[0.2, 1.9, 2.5, 3.0, 0.0], 3);
        let tr = allocate(&c, &[0, 1, 1, 0, 1], &strict(2, vec![5, 5, 5])).unwrap();
        assert!(tr.treated.iter().all(|&z| z));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let c = cohort_with(&[0.2, 0.4], 1);
        assert!(allocate(&c, &[0], &strict(2, vec![1])).is_err());
        assert!(allocate(&c, &[0, 2], &strict(2, vec![1])).is_err());
        assert!(allocate(&c, &[0, 1], &strict(2, vec![1, 1])).is_err());
    }

    #[test]
    fn treated_mass_counts() {
        let c = cohort_with(&[0.5, 0.7, 1.5, 1.8], 2);
        let spec = strict(2, vec![1, 2]);
        let tr = allocate(&c, &[0, 1, 1, 0], &spec).unwrap();
        // t=1: unit 0 (q0). t=2: unit 3 (q0) then unit 1 (q1).
        let m = treated_mass_profile(&tr, &spec);
        assert_eq!(m[0], vec![0.25, 0.5]);
        assert_eq!(m[1], vec![0.25, 0.75]);
    }

    fn random_instance(seed: u64) -> (Cohort, QueueSpec, Vec<usize>) {
        let mut r = rng::stream(seed, 0);
        let n = r.random_range(1..12);
        let tau = r.random_range(1..4u32);
        let k = r.random_range(1..4);
        let arrivals: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * f64::from(tau) * 4.0).round() / 4.0).collect();
        let budgets: Vec<i64> = (0..tau).map(|_| r.random_range(0..4)).collect();
        let mode = if k > 1 && r.random_bool(0.5) {
            // alpha chosen so that sum(alpha * p) = beta for equal p
            let alpha: Vec<f64> = (0..k).map(|j| 1.0 - j as f64 / (k - 1) as f64).collect();
            ServiceMode::Rationed { alpha_target: alpha }
        } else {
            ServiceMode::Strict
        };
        let p = vec![1.0 / k as f64; k];
        let beta = match &mode {
            ServiceMode::Rationed { alpha_target } => alpha_target.iter().sum::<f64>() / k as f64,
            ServiceMode::Strict => 0.5,
        };
        let spec = QueueSpec::new(p, beta, budgets, mode).unwrap();
        let policy = PolicyMatrix::uniform(n, spec.p()).unwrap();
        let queues = sample_queues(&policy, seed);
        (cohort_with(&arrivals, tau), spec, queues)
    }

    fn check_trace(c: &Cohort, spec: &QueueSpec, tr: &AllocationTrace) {
        for t in 1..=spec.tau() {
            assert!(tr.treated_in_period(t) as u64 <= spec.budgets()[t as usize - 1]);
        }
        let u = c.units();
        for i in 0..tr.n() {
            assert_eq!(tr.treated[i], tr.treat_period[i].is_some());
            for j in 0..tr.n() {
                let earlier = u[i].arrival < u[j].arrival || (u[i].arrival == u[j].arrival && i < j);
                if tr.queues[i] == tr.queues[j] && earlier && tr.treated[j] {
                    assert!(tr.treated[i], "FIFO violated: {i} before {j}");
                    assert!(tr.treat_period[i] <= tr.treat_period[j]);
                }
            }
        }
        if matches!(spec.mode(), ServiceMode::Strict) {
            // no waste: a period either exhausts its budget or clears everyone eligible
            for t in 1..=spec.tau() {
                let eligible = (0..tr.n())
                    .filter(|&i| u[i].arrival <= f64::from(t) && tr.treat_period[i].is_none_or(|p| p >= t))
                    .count() as u64;
                let served = tr.treated_in_period(t) as u64;
                assert_eq!(served, eligible.min(spec.budgets()[t as usize - 1]));
            }
        }
    }

    #[test]
    fn invariants_hold_on_random_instances() {
        for seed in 0..300 {
            let (c, spec, q) = random_instance(seed);
            let tr = allocate(&c, &q, &spec).unwrap();
            check_trace(&c, &spec, &tr);
        }
    }

    #[test]
    fn moving_up_a_queue_never_loses_treatment() {
        for seed in 0..100 {
            let (c, spec, q) = random_instance(1000 + seed);
            if !matches!(spec.mode(), ServiceMode::Strict) {
                continue;
            }
            let base = allocate(&c, &q, &spec).unwrap();
            for i in 0..c.n() {
                for better in 0..q[i] {
                    let mut moved = q.clone();
                    moved[i] = better;
                    let alt = allocate(&c, &moved, &spec).unwrap();
                    assert!(!base.treated[i] || alt.treated[i], "seed {seed} unit {i}");
                }
            }
        }
    }

    fn arrived_counts(c: &Cohort, q: &[usize], spec: &QueueSpec, skip: Option<usize>) -> Vec<u64> {
        let (k, tau) = (spec.k(), spec.tau() as usize);
        let mut a = vec![0u64; k * tau];
        for (i, u) in c.units().iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            for t in (arrival_period(u.arrival) as usize - 1)..tau {
                a[t * k + q[i]] += 1;
            }
        }
        a
    }

    #[test]
    fn counts_engine_matches_unit_allocator() {
        for seed in 0..300 {
            let (c, spec, q) = random_instance(seed);
            let tr = allocate(&c, &q, &spec).unwrap();
            let counts = ServiceCounts::run(&arrived_counts(&c, &q, &spec, None), &spec);
            for k in 0..spec.k() {
                let treated = (0..c.n()).filter(|&i| q[i] == k && tr.treated[i]).count() as u64;
                assert_eq!(counts.served_total(k), treated);
            }
        }
    }

    #[test]
    fn probe_matches_pinned_allocation() {
        for seed in 0..300 {
            let (c, spec, q) = random_instance(seed);
            let u = c.units();
            for i in 0..c.n() {
                let others = arrived_counts(&c, &q, &spec, Some(i));
                let counts = ServiceCounts::run(&others, &spec);
                for k in 0..spec.k() {
                    let ahead = (0..c.n())
                        .filter(|&j| {
                            j != i
                                && q[j] == k
                                && (u[j].arrival < u[i].arrival || (u[j].arrival == u[i].arrival && j < i))
                        })
                        .count() as u64;
                    let probed = counts.probe(&others, &spec, k, arrival_period(u[i].arrival), ahead);
                    let mut pinned = q.clone();
                    pinned[i] = k;
                    let tr = allocate(&c, &pinned, &spec).unwrap();
                    assert_eq!(probed, tr.treat_period[i], "seed {seed} unit {i} queue {k}");
                }
            }
        }
    }
}
