use serde::{Deserialize, Serialize};

use super::MechanismError;

/// How each period's budget is spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceMode {
    /// Serve queue 1 before queue 2 and so on; FIFO within a queue.
    Strict,
    /// Split every period's budget into per-queue shares proportional to
    /// `alpha_target[k] * p[k]`; each queue is served FIFO from its own share
    /// and shares are not transferable.
    Rationed { alpha_target: Vec<f64> },
}

/// Mechanism parameters: queue proportions, budget fraction and per-period budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueSpec {
    p: Vec<f64>,
    beta: f64,
    budgets: Vec<u64>,
    mode: ServiceMode,
    shares: Vec<Vec<u64>>,
}

impl QueueSpec {
    pub fn new(
        p: Vec<f64>,
        beta: f64,
        budgets: Vec<i64>,
        mode: ServiceMode,
    ) -> Result<Self, MechanismError> {
        validate_simplex(&p)?;
        if !(beta > 0.0 && beta < 1.0) {
            return Err(MechanismError::Domain(format!("budget fraction {beta} not in (0,1)")));
        }
        if budgets.is_empty() {
            return Err(MechanismError::Domain("at least one allocation period is required".into()));
        }
        if let Some((t, b)) = budgets.iter().enumerate().find(|(_, &b)| b < 0) {
            return Err(MechanismError::Domain(format!("budget for period {} is negative ({b})", t + 1)));
        }
        let budgets: Vec<u64> = budgets.into_iter().map(|b| b as u64).collect();
        let shares = match &mode {
            ServiceMode::Strict => Vec::new(),
            ServiceMode::Rationed { alpha_target } => {
                if alpha_target.len() != p.len() {
                    return Err(MechanismError::Invalid(format!(
                        "alpha_target has {} entries for {} queues",
                        alpha_target.len(),
                        p.len()
                    )));
                }
                if alpha_target.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(MechanismError::Domain("alpha_target entries must lie in [0,1]".into()));
                }
                let mass: f64 = alpha_target.iter().zip(&p).map(|(a, p)| a * p).sum();
                if (mass - beta).abs() > 1e-9 {
                    return Err(MechanismError::Domain(format!(
                        "rationed targets give sum(alpha*p) = {mass}, expected beta = {beta}"
                    )));
                }
                let weights: Vec<f64> = alpha_target.iter().zip(&p).map(|(a, p)| a * p).collect();
                budgets.iter().map(|&b| apportion(b, &weights)).collect()
            }
        };
        Ok(QueueSpec {
            p,
            beta,
            budgets,
            mode,
            shares,
        })
    }

    /// Budgets generated by [`make_budgets`] for arrivals uniform over the horizon.
    pub fn with_uniform_arrivals(
        n: usize,
        p: Vec<f64>,
        beta: f64,
        tau: u32,
        mode: ServiceMode,
    ) -> Result<Self, MechanismError> {
        let mass = vec![1.0 / f64::from(tau); tau as usize];
        let budgets = make_budgets(n, beta, tau, &mass)?;
        Self::new(p, beta, budgets.into_iter().map(|b| b as i64).collect(), mode)
    }

    /// Same mechanism with every period's budget replaced.
    pub fn with_budgets(&self, budgets: Vec<i64>) -> Result<Self, MechanismError> {
        Self::new(self.p.clone(), self.beta, budgets, self.mode.clone())
    }

    pub fn k(&self) -> usize {
        self.p.len()
    }

    pub fn tau(&self) -> u32 {
        self.budgets.len() as u32
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn budgets(&self) -> &[u64] {
        &self.budgets
    }

    pub fn mode(&self) -> &ServiceMode {
        &self.mode
    }

    /// Per-queue share of period `t` (0-based) in rationed mode.
    pub(crate) fn share(&self, t: usize, k: usize) -> u64 {
        self.shares[t][k]
    }

    pub fn is_rationed(&self) -> bool {
        matches!(self.mode, ServiceMode::Rationed { .. })
    }
}

pub(crate) fn validate_simplex(p: &[f64]) -> Result<(), MechanismError> {
    if p.is_empty() {
        return Err(MechanismError::Domain("at least one queue is required".into()));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(MechanismError::Domain("queue proportions must be nonnegative".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(MechanismError::Domain(format!("queue proportions sum to {s}, not 1")));
    }
    Ok(())
}

/// Largest-remainder apportionment of `total` integer slots by `weights`.
/// Ties go to the lower index. All-zero weights allocate nothing.
pub fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let w: f64 = weights.iter().sum();
    if total == 0 || w <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|x| total as f64 * x / w).collect();
    let mut out: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Per-period budgets whose cumulative sums track `beta * n * P(A <= t)`.
///
/// The total is `round(beta * n)`; cumulative targets are rounded and
/// differenced, so every cumulative sum is within 1/2 of its target.
pub fn make_budgets(
    n: usize,
    beta: f64,
    tau: u32,
    arrival_mass: &[f64],
) -> Result<Vec<u64>, MechanismError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(MechanismError::Domain(format!("budget fraction {beta} not in (0,1)")));
    }
    if arrival_mass.len() != tau as usize {
        return Err(MechanismError::Invalid(format!(
            "arrival mass has {} periods, horizon is {tau}",
            arrival_mass.len()
        )));
    }
    if arrival_mass.iter().any(|&m| !(m >= 0.0)) || (arrival_mass.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MechanismError::Domain("arrival mass must be a probability vector".into()));
    }
    let total = (beta * n as f64).round();
    let mut cum = 0.0;
    let mut prev = 0u64;
    let mut out = Vec::with_capacity(tau as usize);
    for (t, m) in arrival_mass.iter().enumerate() {
        cum += m;
        let target = if t + 1 == arrival_mass.len() {
            total as u64
        } else {
            (total * cum).round().min(total) as u64
        };
        let target = target.max(prev);
        out.push(target - prev);
        prev = target;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split() {
        assert_eq!(make_budgets(100, 0.5, 2, &[0.5, 0.5]).unwrap(), vec![25, 25]);
    }

    #[test]
    fn thirds_track_cumulative_targets() {
        let third = 1.0 / 3.0;
        let b = make_budgets(100, 0.5, 3, &[third, third, third]).unwrap();
        assert_eq!(b.iter().sum::<u64>(), 50);
        let mut cum = 0.0;
        for (t, x) in b.iter().enumerate() {
            cum += *x as f64;
            let target = 50.0 * (t + 1) as f64 / 3.0;
            assert!((cum - target).abs() < 1.0);
        }
        assert_eq!(b, vec![17, 16, 17]);
    }

    #[test]
    fn single_period_rounds_up() {
        assert_eq!(make_budgets(10, 0.99, 1, &[1.0]).unwrap(), vec![10]);
    }

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(apportion(10, &[0.3, 0.2]), vec![6, 4]);
        assert_eq!(apportion(5, &[1.0, 1.0]), vec![3, 2]);
        assert_eq!(apportion(7, &[0.0, 0.0]), vec![0, 0]);
        assert_eq!(apportion(3, &[1.0, 1.0, 1.0]), vec![1, 1, 1]);
    }

    #[test]
    fn negative_budget_rejected() {
        let err = QueueSpec::new(vec![0.5, 0.5], 0.5, vec![3, -1], ServiceMode::Strict).unwrap_err();
        assert!(matches!(err, MechanismError::Domain(_)));
    }

    #[test]
    fn rationed_targets_must_match_budget() {
        let bad = ServiceMode::Rationed {
            alpha_target: vec![0.7, 0.4],
        };
        assert!(QueueSpec::new(vec![0.5, 0.5], 0.5, vec![10], bad).is_err());
        let good = ServiceMode::Rationed {
            alpha_target: vec![0.6, 0.4],
        };
        let spec = QueueSpec::new(vec![0.5, 0.5], 0.5, vec![10, 11], good).unwrap();
        assert_eq!(spec.share(0, 0) + spec.share(0, 1), 10);
        assert_eq!((spec.share(1, 0), spec.share(1, 1)), (7, 4));
    }

    #[test]
    fn proportions_validated() {
        assert!(QueueSpec::new(vec![0.5, 0.6], 0.5, vec![1], ServiceMode::Strict).is_err());
        assert!(QueueSpec::new(vec![1.2, -0.2], 0.5, vec![1], ServiceMode::Strict).is_err());
        assert!(QueueSpec::new(vec![0.5, 0.5], 1.0, vec![1], ServiceMode::Strict).is_err());
    }
}
