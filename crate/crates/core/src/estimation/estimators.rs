use super::nuisance::{NuisanceSet, Sample};
use super::report::{mean, standard_error, Estimate, EstimateReport, Method};
use super::variance::variance_pliv_formula;
use super::EstimationError;
use crate::mechanism::{PolicyMatrix, PropensityTable};
use crate::propensity::{finite_instrument, marginal_propensity, AlphaVector};

/// Doubly robust ATE with influence values
/// `mu1 - mu0 + Z (Y - mu1) / pi - (1 - Z)(Y - mu0) / (1 - pi)`.
pub fn estimate_dr_ate(
    data: &Sample,
    pi: &[f64],
    nuisances: &NuisanceSet,
    gamma: f64,
) -> Result<Estimate, EstimationError> {
    let n = data.n();
    if pi.len() != n {
        return Err(EstimationError::Invalid(format!("{} propensities for {n} units", pi.len())));
    }
    let bad: Vec<usize> = (0..n).filter(|&i| !(pi[i] >= gamma && pi[i] <= 1.0 - gamma)).collect();
    if !bad.is_empty() || !(gamma > 0.0) {
        return Err(EstimationError::Positivity { units: bad, gamma });
    }
    let nv = nuisances.evaluate(&data.h, pi);
    let phi: Vec<f64> = (0..n)
        .map(|i| {
            let (y, z) = (data.y[i], data.zf(i));
            nv.mu1[i] - nv.mu0[i] + z * (y - nv.mu1[i]) / pi[i]
                - (1.0 - z) * (y - nv.mu0[i]) / (1.0 - pi[i])
        })
        .collect();
    let point = mean(&phi);
    let se = standard_error(&phi);
    let influence = phi.iter().map(|p| p - point).collect();
    Ok(Estimate {
        report: EstimateReport::wald(point, se, n, Method::DrAte),
        influence,
    })
}

/// Instrument values, marginal propensities and the relevance check.
struct Instrumented {
    r: Vec<f64>,
    pi: Vec<f64>,
}

fn check_relevance(r: &[f64], floor: f64) -> Result<(), EstimationError> {
    let strength = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
    if !(strength >= floor) || strength == 0.0 {
        return Err(EstimationError::Relevance(format!(
            "mean squared instrument {strength:.3e} is below the floor {floor:.3e}"
        )));
    }
    Ok(())
}

fn asymptotic_instrument(data: &Sample, policy: &PolicyMatrix, alpha: &AlphaVector) -> Result<Instrumented, EstimationError> {
    if policy.n() != data.n() || policy.k() != alpha.k() {
        return Err(EstimationError::Invalid("policy shape does not match the sample".into()));
    }
    if let Some(&q) = data.q.iter().find(|&&q| q >= alpha.k()) {
        return Err(EstimationError::Invalid(format!("queue index {q} out of range")));
    }
    let pi: Vec<f64> = policy.rows().map(|row| marginal_propensity(row, alpha)).collect();
    let r = data.q.iter().zip(&pi).map(|(&q, p)| alpha.get(q) - p).collect();
    Ok(Instrumented { r, pi })
}

fn table_instrument(data: &Sample, table: &PropensityTable) -> Result<Instrumented, EstimationError> {
    if table.n() != data.n() {
        return Err(EstimationError::Invalid("propensity table does not match the sample".into()));
    }
    let r = (0..data.n())
        .map(|i| finite_instrument(table, i, data.q[i]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Instrumented {
        r,
        pi: table.marginals().to_vec(),
    })
}

/// Ratio `sum w (Y - m) / sum w (Z - pi)` with weights `w = r / sigma`.
fn weighted_ratio(data: &Sample, inst: &Instrumented, nuisances: &NuisanceSet) -> Result<(f64, Vec<f64>), EstimationError> {
    let n = data.n();
    let nv = nuisances.evaluate(&data.h, &inst.pi);
    let w: Vec<f64> = (0..n).map(|i| inst.r[i] / nv.sigma[i]).collect();
    let den: f64 = (0..n).map(|i| w[i] * (data.zf(i) - inst.pi[i])).sum::<f64>() / n as f64;
    if den == 0.0 || !den.is_finite() {
        return Err(EstimationError::Relevance("instrument is uncorrelated with treatment".into()));
    }
    let num: f64 = (0..n).map(|i| w[i] * (data.y[i] - nv.m[i])).sum::<f64>() / n as f64;
    let psi = num / den;
    let phi = (0..n)
        .map(|i| w[i] * (data.y[i] - nv.m[i] - psi * (data.zf(i) - inst.pi[i])) / den)
        .collect();
    Ok((psi, phi))
}

/// Partially linear IV estimator with the variance-weighted limiting
/// instrument `(alpha_Q - pi) / sigma`.
pub fn estimate_pliv(
    data: &Sample,
    policy: &PolicyMatrix,
    alpha: &AlphaVector,
    nuisances: &NuisanceSet,
    relevance_floor: f64,
) -> Result<Estimate, EstimationError> {
    let inst = asymptotic_instrument(data, policy, alpha)?;
    check_relevance(&inst.r, relevance_floor)?;
    let (psi, influence) = weighted_ratio(data, &inst, nuisances)?;
    let sigma = nuisances.evaluate(&data.h, &inst.pi).sigma;
    let v = variance_pliv_formula(policy, alpha, &sigma)?;
    let n = data.n();
    Ok(Estimate {
        report: EstimateReport::wald(psi, (v / n as f64).sqrt(), n, Method::Pliv),
        influence,
    })
}

/// PLIV with the finite-n instrument `pi~(i, Q_i) - pi(i)` read from a
/// propensity table; the standard error is the sandwich form.
pub fn estimate_pliv_table(
    data: &Sample,
    table: &PropensityTable,
    nuisances: &NuisanceSet,
    relevance_floor: f64,
) -> Result<Estimate, EstimationError> {
    let inst = table_instrument(data, table)?;
    check_relevance(&inst.r, relevance_floor)?;
    let (psi, influence) = weighted_ratio(data, &inst, nuisances)?;
    let n = data.n();
    Ok(Estimate {
        report: EstimateReport::wald(psi, standard_error(&influence), n, Method::Pliv),
        influence,
    })
}

/// Unweighted IV ratio `sum r Y / sum r Z`.
pub fn estimate_iv_ratio(y: &[f64], z: &[f64], r: &[f64]) -> Result<Estimate, EstimationError> {
    let n = y.len();
    if z.len() != n || r.len() != n || n == 0 {
        return Err(EstimationError::Invalid("IV inputs differ in length".into()));
    }
    let den = r.iter().zip(z).map(|(r, z)| r * z).sum::<f64>() / n as f64;
    if den == 0.0 || !den.is_finite() {
        return Err(EstimationError::Relevance("sum of r * Z is zero".into()));
    }
    let beta = r.iter().zip(y).map(|(r, y)| r * y).sum::<f64>() / n as f64 / den;
    let phi: Vec<f64> = (0..n).map(|i| r[i] * (y[i] - beta * z[i]) / den).collect();
    Ok(Estimate {
        report: EstimateReport::wald(beta, standard_error(&phi), n, Method::IvRatio),
        influence: phi,
    })
}

/// IV ratio on a sample with instruments from the asymptotic formula.
pub fn estimate_iv_ratio_asymptotic(
    data: &Sample,
    policy: &PolicyMatrix,
    alpha: &AlphaVector,
) -> Result<Estimate, EstimationError> {
    let inst = asymptotic_instrument(data, policy, alpha)?;
    let z: Vec<f64> = (0..data.n()).map(|i| data.zf(i)).collect();
    estimate_iv_ratio(&data.y, &z, &inst.r)
}

/// IV ratio on a sample with instruments from a propensity table.
pub fn estimate_iv_ratio_table(data: &Sample, table: &PropensityTable) -> Result<Estimate, EstimationError> {
    let inst = table_instrument(data, table)?;
    let z: Vec<f64> = (0..data.n()).map(|i| data.zf(i)).collect();
    estimate_iv_ratio(&data.y, &z, &inst.r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::DgpTag;
    use crate::estimation::nuisance::Curve;
    use crate::rng;
    use rand::Rng;

    fn constant_nuisance(c: f64) -> NuisanceSet {
        NuisanceSet {
            mu0: Curve::constant(c),
            mu1: Curve::constant(c),
            m: Curve::constant(c),
            m_slope: 0.0,
            var0: Curve::constant(1.0),
            var1: Curve::constant(1.0),
            sigma_floor: 1e-6,
            tag: crate::estimation::FitTag::Oracle,
        }
    }

    #[test]
    fn dr_constant_outcomes_is_zero() {
        let n = 50;
        let s = Sample::new(vec![0.5; n], (0..n).map(|i| i % 3 == 0).collect(), vec![0.7; n], vec![0; n]).unwrap();
        let e = estimate_dr_ate(&s, &vec![0.4; n], &constant_nuisance(0.7), 0.01).unwrap();
        assert_eq!(e.report.point, 0.0);
        assert_eq!(e.report.ci_low, e.report.point - 1.96 * e.report.se);
    }

    #[test]
    fn dr_positivity_names_units() {
        let n = 4;
        let s = Sample::new(vec![0.5; n], vec![true; n], vec![1.0; n], vec![0; n]).unwrap();
        let err = estimate_dr_ate(&s, &[0.5, 0.0, 0.5, 1.0], &constant_nuisance(0.0), 0.01).unwrap_err();
        assert_eq!(err, EstimationError::Positivity { units: vec![1, 3], gamma: 0.01 });
        assert!(err.to_string().contains("[1, 3]"));
    }

    fn noiseless_sample(n: usize, psi: f64, policy: &PolicyMatrix, alpha: &AlphaVector, seed: u64) -> Sample {
        // treatment drawn with the queue's probability; Y = psi Z + h exactly
        let mut r = rng::stream(seed, 0);
        let h: Vec<f64> = (0..n).map(|_| r.random_range(0.1..0.9)).collect();
        let q: Vec<usize> = (0..n)
            .map(|i| if r.random::<f64>() < policy.row(i)[0] { 0 } else { 1 })
            .collect();
        let z: Vec<bool> = q.iter().map(|&q| r.random::<f64>() < alpha.get(q)).collect();
        let y = (0..n).map(|i| h[i] + psi * f64::from(u8::from(z[i]))).collect();
        Sample::new(h, z, y, q).unwrap()
    }

    #[test]
    fn noiseless_pliv_and_iv_are_exact() {
        let alpha = AlphaVector::custom(vec![0.6, 0.4], 0.5, &[0.5, 0.5]).unwrap();
        for seed in 0..10 {
            let mut r = rng::stream(seed, 1);
            let rows: Vec<Vec<f64>> = (0..300)
                .map(|_| {
                    let a = r.random_range(0.05..0.95);
                    vec![a, 1.0 - a]
                })
                .collect();
            let policy = PolicyMatrix::from_rows(&rows).unwrap();
            let s = noiseless_sample(300, -0.1, &policy, &alpha, seed);
            // oracle m = h + psi * pi
            let mut nuis = NuisanceSet::oracle(DgpTag::PartiallyLinear, -0.1);
            nuis.var1 = Curve::Polynomial(vec![0.01, 0.3]);
            let e = estimate_pliv(&s, &policy, &alpha, &nuis, 1e-6).unwrap();
            assert!((e.report.point + 0.1).abs() < 1e-12, "{}", e.report.point);
            let iv = estimate_iv_ratio_asymptotic(
                &Sample { y: s.y.iter().zip(&s.h).map(|(y, h)| y - h).collect(), ..s.clone() },
                &policy,
                &alpha,
            )
            .unwrap();
            assert!((iv.report.point + 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_policy_fails_relevance() {
        let alpha = AlphaVector::from_budget(0.5, &[0.5, 0.5]).unwrap();
        let rows: Vec<Vec<f64>> = (0..10).map(|i| if i < 5 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let policy = PolicyMatrix::from_rows(&rows).unwrap();
        let s = Sample::new(
            vec![0.5; 10],
            (0..10).map(|i| i < 5).collect(),
            vec![1.0; 10],
            (0..10).map(|i| usize::from(i >= 5)).collect(),
        )
        .unwrap();
        let e = estimate_pliv(&s, &policy, &alpha, &NuisanceSet::oracle(DgpTag::Bernoulli, -0.1), 1e-6);
        assert!(matches!(e, Err(EstimationError::Relevance(_))));
    }

    #[test]
    fn iv_ratio_zero_instrument() {
        assert!(matches!(
            estimate_iv_ratio(&[1.0, 2.0], &[1.0, 0.0], &[0.0, 0.0]),
            Err(EstimationError::Relevance(_))
        ));
    }

    #[test]
    fn pliv_table_matches_asymptotic_table() {
        let alpha = AlphaVector::custom(vec![0.6, 0.4], 0.5, &[0.5, 0.5]).unwrap();
        let policy = PolicyMatrix::uniform(200, &[0.5, 0.5]).unwrap();
        let s = noiseless_sample(200, 0.2, &policy, &alpha, 3);
        let table = crate::propensity::asymptotic_table(&policy, &alpha).unwrap();
        let nuis = NuisanceSet::oracle(DgpTag::PartiallyLinear, 0.2);
        let a = estimate_pliv(&s, &policy, &alpha, &nuis, 1e-6).unwrap();
        let b = estimate_pliv_table(&s, &table, &nuis, 1e-6).unwrap();
        assert!((a.report.point - b.report.point).abs() < 1e-12);
    }
}
