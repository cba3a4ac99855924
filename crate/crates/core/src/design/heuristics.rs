use super::DesignError;
use crate::mechanism::PolicyMatrix;

/// Every row equal to `p`.
pub fn rct_policy(n: usize, p: &[f64]) -> PolicyMatrix {
    PolicyMatrix::uniform(n, p).expect("p lies on the simplex")
}

/// Quantile queue of each unit: the `p_0 n` highest-utility units go to
/// queue 0, the next `p_1 n` to queue 1, and so on.
pub fn quantile_queues(utilities: &[f64], p: &[f64]) -> Vec<usize> {
    let n = utilities.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| utilities[b].total_cmp(&utilities[a]).then(a.cmp(&b)));
    let mut bounds = Vec::with_capacity(p.len());
    let mut cum = 0.0;
    for &pk in p {
        cum += pk;
        bounds.push((cum * n as f64).round() as usize);
    }
    let mut queues = vec![0; n];
    let mut k = 0;
    for (rank, &i) in order.iter().enumerate() {
        while k + 1 < p.len() && rank >= bounds[k] {
            k += 1;
        }
        queues[i] = k;
    }
    queues
}

/// Quantile assignment followed by switching to the adjacent queues with
/// probabilities proportional to their relative sizes.
pub fn switch_policy(utilities: &[f64], p: &[f64], strength: f64) -> Result<PolicyMatrix, DesignError> {
    if !(0.0..1.0).contains(&strength) {
        return Err(DesignError::Invalid(format!("switch strength {strength} not in [0,1)")));
    }
    let k = p.len();
    let ratio = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { 0.0 };
    let queues = quantile_queues(utilities, p);
    let mut data = vec![0.0; utilities.len() * k];
    for (i, &q) in queues.iter().enumerate() {
        let mut up = if q + 1 < k { strength * ratio(p[q + 1], p[q]) } else { 0.0 };
        let mut down = if q > 0 { strength * ratio(p[q - 1], p[q]) } else { 0.0 };
        if up + down > 1.0 {
            let s = up + down;
            up /= s;
            down /= s;
        }
        let row = &mut data[i * k..(i + 1) * k];
        row[q] = 1.0 - up - down;
        if q + 1 < k {
            row[q + 1] = up;
        }
        if q > 0 {
            row[q - 1] = down;
        }
    }
    Ok(PolicyMatrix::from_flat(k, data)?)
}

/// Sequential softmax fill of queues `0..K-1` on residual mass; the rest
/// goes to the last queue. Entries of the first `K-1` queues are capped at
/// `min(cap, residual)`.
pub fn greedy_softmax_policy(utilities: &[f64], p: &[f64], scale: f64, cap: f64) -> Result<PolicyMatrix, DesignError> {
    if !(scale > 0.0) {
        return Err(DesignError::Invalid(format!("softmax scale must be positive, got {scale}")));
    }
    if !(cap > 0.0 && cap <= 1.0) {
        return Err(DesignError::Invalid(format!("cap {cap} not in (0,1]")));
    }
    let n = utilities.len();
    let k = p.len();
    let mut residual = vec![1.0; n];
    let mut data = vec![0.0; n * k];
    for q in 0..k.saturating_sub(1) {
        let target = p[q] * n as f64;
        let limit: Vec<f64> = residual.iter().map(|r| cap.min(*r)).collect();
        let mut s: Vec<f64> = (0..n).map(|i| (scale * utilities[i] * residual[i]).exp_m1()).collect();
        let total: f64 = s.iter().sum();
        if total > 0.0 {
            s.iter_mut().for_each(|x| *x *= target / total);
        }
        let mut capped = vec![false; n];
        let mut capped_mass = 0.0;
        loop {
            let worst = (0..n)
                .filter(|&i| !capped[i] && s[i] > limit[i])
                .max_by(|&a, &b| s[a].total_cmp(&s[b]).then(b.cmp(&a)));
            let Some(i) = worst else { break };
            if capped_mass + limit[i] >= target {
                break;
            }
            capped[i] = true;
            capped_mass += limit[i];
            s[i] = 0.0;
            let free: f64 = s.iter().sum();
            if free <= 0.0 {
                break;
            }
            let f = (target - capped_mass) / free;
            s.iter_mut().for_each(|x| *x *= f);
        }
        for i in 0..n {
            let v = if capped[i] { limit[i] } else { s[i].min(limit[i]) };
            data[i * k + q] = v;
            residual[i] = (residual[i] - v).max(0.0);
        }
    }
    for i in 0..n {
        data[i * k + k - 1] = residual[i];
    }
    Ok(PolicyMatrix::from_flat(k, data)?)
}
