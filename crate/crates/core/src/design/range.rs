use super::problem::achieved_utility;
use crate::mechanism::PolicyMatrix;
use crate::propensity::AlphaVector;

/// Deterministic-as-possible policy that fills queues in priority order with
/// units ranked by utility (descending when `high_first`). Each queue gets
/// exactly `p_k n` mass; a unit straddling a boundary is split.
pub fn assortative_policy(utilities: &[f64], alpha: &AlphaVector, high_first: bool) -> PolicyMatrix {
    let n = utilities.len();
    let k = alpha.k();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let c = utilities[b].total_cmp(&utilities[a]);
        (if high_first { c } else { c.reverse() }).then(a.cmp(&b))
    });
    let edges: Vec<f64> = alpha.cumulative().iter().map(|c| c * n as f64).collect();
    let mut data = vec![0.0; n * k];
    for (rank, &i) in order.iter().enumerate() {
        let (lo, hi) = (rank as f64, rank as f64 + 1.0);
        for q in 0..k {
            let overlap = hi.min(edges[q + 1]) - lo.max(edges[q]);
            if overlap > 0.0 {
                data[i * k + q] = overlap;
            }
        }
        let s: f64 = data[i * k..(i + 1) * k].iter().sum();
        data[i * k..(i + 1) * k].iter_mut().for_each(|x| *x /= s);
    }
    PolicyMatrix::from_flat(k, data).expect("assortative rows lie on the simplex")
}

/// Smallest and largest achievable `(1/n) sum_i u_i pi_i` over policies whose
/// column means equal `p`.
pub fn feasible_utility_range(utilities: &[f64], alpha: &AlphaVector) -> (f64, f64) {
    let lo = achieved_utility(&assortative_policy(utilities, alpha, false), alpha, utilities);
    let hi = achieved_utility(&assortative_policy(utilities, alpha, true), alpha, utilities);
    (lo, hi)
}
