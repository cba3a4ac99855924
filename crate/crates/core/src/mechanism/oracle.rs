use super::montecarlo::{PropensitySource, PropensityTable};
use super::policy::PolicyMatrix;
use super::spec::{QueueSpec, ServiceMode};
use super::MechanismError;

const MAX_UNITS: usize = 8;
const MAX_QUEUES: usize = 3;
const MAX_WORLDS: u64 = 20_000_000;

/// One joint realization of queues and arrival order, with the
/// counterfactual treatment of every unit under every queue.
#[derive(Debug)]
pub struct World<'a> {
    pub queues: &'a [usize],
    /// `rank[i]`: position of unit `i` in the arrival order.
    pub rank: &'a [usize],
    pub prob: f64,
    k: usize,
    counterfactual: &'a [bool],
}

impl World<'_> {
    /// `Z_i` had unit `i` been placed in queue `q`, everything else fixed.
    pub fn treated_if(&self, i: usize, q: usize) -> bool {
        self.counterfactual[i * self.k + q]
    }

    pub fn treated(&self, i: usize) -> bool {
        self.treated_if(i, self.queues[i])
    }
}

/// Exhaustive enumeration of a single-period mechanism.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    policy: PolicyMatrix,
    spec: QueueSpec,
    orders: Vec<Vec<usize>>,
}

impl ExactOracle {
    pub fn n(&self) -> usize {
        self.policy.n()
    }

    pub fn k(&self) -> usize {
        self.spec.k()
    }

    pub fn policy(&self) -> &PolicyMatrix {
        &self.policy
    }

    pub fn world_count(&self) -> u64 {
        (self.k() as u64).pow(self.n() as u32) * self.orders.len() as u64
    }

    /// Visits every world with positive probability.
    pub fn for_each_world<F: FnMut(&World<'_>)>(&self, mut visit: F) {
        let (n, k) = (self.n(), self.k());
        let order_prob = 1.0 / self.orders.len() as f64;
        let mut queues = vec![0usize; n];
        let mut counterfactual = vec![false; n * k];
        loop {
            let q_prob: f64 = (0..n).map(|i| self.policy.row(i)[queues[i]]).product();
            if q_prob > 0.0 {
                for rank in &self.orders {
                    self.fill_counterfactual(&queues, rank, &mut counterfactual);
                    visit(&World {
                        queues: &queues,
                        rank,
                        prob: q_prob * order_prob,
                        k,
                        counterfactual: &counterfactual,
                    });
                }
            }
            // odometer
            let mut pos = 0;
            loop {
                if pos == n {
                    return;
                }
                queues[pos] += 1;
                if queues[pos] < k {
                    break;
                }
                queues[pos] = 0;
                pos += 1;
            }
        }
    }

    fn fill_counterfactual(&self, queues: &[usize], rank: &[usize], out: &mut [bool]) {
        let (n, k) = (self.n(), self.k());
        let budget = self.spec.budgets()[0];
        for i in 0..n {
            for q in 0..k {
                let same_ahead = (0..n)
                    .filter(|&j| j != i && queues[j] == q && rank[j] < rank[i])
                    .count() as u64;
                out[i * k + q] = match self.spec.mode() {
                    ServiceMode::Strict => {
                        let higher = (0..n).filter(|&j| j != i && queues[j] < q).count() as u64;
                        higher + same_ahead < budget
                    }
                    ServiceMode::Rationed { .. } => same_ahead < self.spec.share(0, q),
                };
            }
        }
    }
}

fn all_orders(n: usize) -> Vec<Vec<usize>> {
    // rank vectors of every permutation, lexicographic
    let mut perm: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    loop {
        out.push(perm.clone());
        let Some(i) = (1..n).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}

/// Exact propensities of a single-period mechanism by enumerating every
/// queue vector and every (uniformly random) arrival order.
pub fn exact_oracle(
    policy: &PolicyMatrix,
    spec: &QueueSpec,
) -> Result<(PropensityTable, ExactOracle), MechanismError> {
    let (n, k) = (policy.n(), policy.k());
    if spec.tau() != 1 {
        return Err(MechanismError::Invalid(format!(
            "exact enumeration needs a single allocation period, got {}",
            spec.tau()
        )));
    }
    if k != spec.k() {
        return Err(MechanismError::Invalid("policy and mechanism disagree on K".into()));
    }
    if n == 0 || n > MAX_UNITS || k > MAX_QUEUES {
        return Err(MechanismError::TooLarge(format!(
            "enumeration is limited to 1..={MAX_UNITS} units and at most {MAX_QUEUES} queues (got n = {n}, K = {k})"
        )));
    }
    let worlds = (k as u64).pow(n as u32) * (1..=n as u64).product::<u64>();
    if worlds > MAX_WORLDS {
        return Err(MechanismError::TooLarge(format!(
            "K^n * n! = {worlds} worlds exceeds the enumeration cap of {MAX_WORLDS}"
        )));
    }
    let oracle = ExactOracle {
        policy: policy.clone(),
        spec: spec.clone(),
        orders: all_orders(n),
    };
    let mut conditional = vec![0.0; n * k];
    let mut marginal = vec![0.0; n];
    oracle.for_each_world(|w| {
        for i in 0..n {
            for q in 0..k {
                if w.treated_if(i, q) {
                    conditional[i * k + q] += w.prob;
                }
            }
            if w.treated(i) {
                marginal[i] += w.prob;
            }
        }
    });
    let table = PropensityTable::new(
        k,
        conditional.into_iter().map(Some).collect(),
        marginal,
        PropensitySource::Exact,
    )?;
    Ok((table, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, ScoreLaw};
    use crate::mechanism::{mc_propensities, McOptions};
    use crate::rng;
    use rand::Rng;

    fn strict(k: usize, b: i64) -> QueueSpec {
        QueueSpec::new(vec![1.0 / k as f64; k], 0.5, vec![b], ServiceMode::Strict).unwrap()
    }

    #[test]
    fn symmetric_three_unit_instance() {
        let policy = PolicyMatrix::uniform(3, &[0.5, 0.5]).unwrap();
        let (t, _) = exact_oracle(&policy, &strict(2, 1)).unwrap();
        for i in 0..3 {
            assert!((t.queue_conditional(i, 0).unwrap() - 7.0 / 12.0).abs() < 1e-12);
            assert!((t.queue_conditional(i, 1).unwrap() - 1.0 / 12.0).abs() < 1e-12);
            assert!((t.marginal(i) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_budget_makes_everyone_treated() {
        let policy = PolicyMatrix::uniform(4, &[0.5, 0.5]).unwrap();
        let (t, oracle) = exact_oracle(&policy, &strict(2, 4)).unwrap();
        for i in 0..4 {
            for q in 0..2 {
                assert!((t.queue_conditional(i, q).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        oracle.for_each_world(|w| assert!((0..4).all(|i| w.treated_if(i, 0) && w.treated_if(i, 1))));
    }

    #[test]
    fn total_probability_consistency() {
        let mut r = rng::stream(42, 0);
        for _ in 0..20 {
            let n = r.random_range(1..=5);
            let k = r.random_range(1..=3);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let w: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 0.01).collect();
                    let s: f64 = w.iter().sum();
                    w.iter().map(|x| x / s).collect()
                })
                .collect();
            let policy = PolicyMatrix::from_rows(&rows).unwrap();
            let (t, oracle) = exact_oracle(&policy, &strict(k, r.random_range(0..=n as i64))).unwrap();
            let mut total = 0.0;
            oracle.for_each_world(|w| total += w.prob);
            assert!((total - 1.0).abs() < 1e-12);
            for i in 0..n {
                let mix: f64 = (0..k).map(|q| rows[i][q] * t.queue_conditional(i, q).unwrap()).sum();
                assert!((mix - t.marginal(i)).abs() < 1e-12);
                for q in 1..k {
                    assert!(t.queue_conditional(i, q - 1).unwrap() >= t.queue_conditional(i, q).unwrap() - 1e-15);
                }
            }
        }
    }

    #[test]
    fn size_guard() {
        let policy = PolicyMatrix::uniform(9, &[0.5, 0.5]).unwrap();
        assert!(matches!(exact_oracle(&policy, &strict(2, 1)), Err(MechanismError::TooLarge(_))));
        let policy = PolicyMatrix::uniform(3, &[0.25; 4]).unwrap();
        assert!(exact_oracle(&policy, &strict(4, 1)).is_err());
        let two_periods = QueueSpec::new(vec![0.5, 0.5], 0.5, vec![1, 1], ServiceMode::Strict).unwrap();
        let policy = PolicyMatrix::uniform(3, &[0.5, 0.5]).unwrap();
        assert!(exact_oracle(&policy, &two_periods).is_err());
    }

    #[test]
    fn forced_monte_carlo_agrees_with_enumeration() {
        let n = 3;
        let policy = PolicyMatrix::from_rows(&[vec![0.7, 0.3], vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let spec = strict(2, 1);
        let (exact, _) = exact_oracle(&policy, &spec).unwrap();
        let cohort = generate_cohort(n, 1, -0.1, &ScoreLaw::default(), 8).unwrap();
        let opts = McOptions {
            reps: 20_000,
            arrival_resampling: true,
            forced_queue: true,
            seed: 77,
            ..McOptions::default()
        };
        let mc = mc_propensities(&cohort, &policy, &spec, &opts).unwrap();
        for i in 0..n {
            for q in 0..2 {
                let want = exact.queue_conditional(i, q).unwrap();
                let got = mc.queue_conditional(i, q).unwrap();
                let se = (want * (1.0 - want) / opts.reps as f64).sqrt().max(1e-9);
                assert!((got - want).abs() <= 3.0 * se, "unit {i} queue {q}: {got} vs {want}");
            }
        }
    }
}
