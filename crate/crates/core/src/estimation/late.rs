use super::EstimationError;
use crate::mechanism::ExactOracle;

/// Complier structure for one pair of queues `k < l`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLate {
    pub k: usize,
    pub l: usize,
    /// Per unit: probability of being a `(k, l)` complier.
    pub complier_prob: Vec<f64>,
    /// Per unit: mean effect among `(k, l)` compliers (0 when there are none).
    pub effect: Vec<f64>,
    /// Per unit: `theta_k theta_l (pi~_k - pi~_l)^2`.
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LateDecomposition {
    pub pairs: Vec<PairLate>,
    pub weighted_average: f64,
    pub iv_ratio: f64,
}

/// Decomposes the population IV ratio into complier effects by enumerating
/// every world of an exact oracle. Outcomes are the units' fixed potential
/// outcomes.
pub fn late_decomposition(oracle: &ExactOracle, y0: &[f64], y1: &[f64]) -> Result<LateDecomposition, EstimationError> {
    let (n, k) = (oracle.n(), oracle.k());
    if y0.len() != n || y1.len() != n {
        return Err(EstimationError::Invalid("outcome vectors do not match the oracle".into()));
    }
    let policy = oracle.policy();
    let mut cond = vec![0.0; n * k];
    let mut violation = None;
    oracle.for_each_world(|w| {
        for i in 0..n {
            for q in 0..k {
                if w.treated_if(i, q) {
                    cond[i * k + q] += w.prob;
                }
                if q > 0 && w.treated_if(i, q) && !w.treated_if(i, q - 1) {
                    violation.get_or_insert((i, q));
                }
            }
        }
    });
    if let Some((i, q)) = violation {
        return Err(EstimationError::Monotonicity(format!(
            "unit {i} is treated in queue {q} but not in queue {}",
            q - 1
        )));
    }
    let marginal: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|q| policy.row(i)[q] * cond[i * k + q]).sum())
        .collect();

    let npairs = k * (k - 1) / 2;
    let mut complier = vec![vec![0.0; n]; npairs];
    let mut complier_effect = vec![vec![0.0; n]; npairs];
    let (mut ry, mut rz) = (0.0, 0.0);
    oracle.for_each_world(|w| {
        for i in 0..n {
            let q = w.queues[i];
            let r = cond[i * k + q] - marginal[i];
            let z = w.treated(i);
            ry += w.prob * r * if z { y1[i] } else { y0[i] };
            rz += w.prob * r * f64::from(u8::from(z));
            let mut p = 0;
            for a in 0..k {
                for b in a + 1..k {
                    if w.treated_if(i, a) && !w.treated_if(i, b) {
                        complier[p][i] += w.prob;
                        complier_effect[p][i] += w.prob * (y1[i] - y0[i]);
                    }
                    p += 1;
                }
            }
        }
    });
    if rz == 0.0 {
        return Err(EstimationError::Relevance("no unit's treatment depends on its queue".into()));
    }

    let mut pairs = Vec::with_capacity(npairs);
    let (mut num, mut den) = (0.0, 0.0);
    let mut p = 0;
    for a in 0..k {
        for b in a + 1..k {
            let weight: Vec<f64> = (0..n)
                .map(|i| {
                    let row = policy.row(i);
                    row[a] * row[b] * (cond[i * k + a] - cond[i * k + b]).powi(2)
                })
                .collect();
            let effect: Vec<f64> = (0..n)
                .map(|i| {
                    if complier[p][i] > 0.0 {
                        complier_effect[p][i] / complier[p][i]
                    } else {
                        0.0
                    }
                })
                .collect();
            for i in 0..n {
                num += weight[i] * effect[i];
                den += weight[i];
            }
            pairs.push(PairLate {
                k: a,
                l: b,
                complier_prob: complier[p].clone(),
                effect,
                weight,
            });
            p += 1;
        }
    }
    Ok(LateDecomposition {
        pairs,
        weighted_average: num / den,
        iv_ratio: ry / rz,
    })
}
