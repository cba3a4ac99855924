use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::EstimationError;
use crate::cohort::{Cohort, DgpTag};
use crate::mechanism::AllocationTrace;
use crate::rng;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;

/// Observed data for one realization: score, treatment, outcome and queue.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub h: Vec<f64>,
    pub z: Vec<bool>,
    pub y: Vec<f64>,
    pub q: Vec<usize>,
}

impl Sample {
    pub fn new(h: Vec<f64>, z: Vec<bool>, y: Vec<f64>, q: Vec<usize>) -> Result<Self, EstimationError> {
        let n = h.len();
        if z.len() != n || y.len() != n || q.len() != n {
            return Err(EstimationError::Invalid("sample columns differ in length".into()));
        }
        if n == 0 {
            return Err(EstimationError::Invalid("empty sample".into()));
        }
        Ok(Sample { h, z, y, q })
    }

    pub fn from_trace(cohort: &Cohort, trace: &AllocationTrace) -> Result<Self, EstimationError> {
        if trace.n() != cohort.n() {
            return Err(EstimationError::Invalid("trace and cohort differ in size".into()));
        }
        let y = cohort
            .units()
            .iter()
            .zip(&trace.treated)
            .map(|(u, &z)| u.outcome(z))
            .collect();
        Sample::new(cohort.scores(), trace.treated.clone(), y, trace.queues.clone())
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn zf(&self, i: usize) -> f64 {
        f64::from(u8::from(self.z[i]))
    }

    pub fn subset(&self, idx: &[usize]) -> Sample {
        Sample {
            h: idx.iter().map(|&i| self.h[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            q: idx.iter().map(|&i| self.q[i]).collect(),
        }
    }
}

/// Random halves `(fit, estimate)` of `0..n`, each sorted.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(rng::derive_seed(seed, 0x5117), 0));
    let (a, b) = idx.split_at(n / 2);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// A function of the score `h`.
#[derive(Debug, Clone, PartialEq)]
pub enum Curve {
    /// Coefficients in increasing powers of `h`.
    Polynomial(Vec<f64>),
    /// Piecewise constant on equal-width bins over `[lo, hi]`; scores outside
    /// the range use the end bins.
    Binned { lo: f64, hi: f64, values: Vec<f64> },
}

impl Curve {
    pub fn constant(c: f64) -> Self {
        Curve::Polynomial(vec![c])
    }

    pub fn eval(&self, h: f64) -> f64 {
        match self {
            Curve::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &a| acc * h + a),
            Curve::Binned { lo, hi, values } => values[bin_of(h, *lo, *hi, values.len())],
        }
    }
}

fn bin_of(h: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if bins == 1 || hi <= lo {
        return 0;
    }
    let b = ((h - lo) / (hi - lo) * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitTag {
    Oracle,
    Binned,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Binned { bins: usize },
    Polynomial { degree: usize },
}

/// Outcome regressions and residual variances.
///
/// `m(h, pi) = m_curve(h) + m_slope * pi` and
/// `sigma(h, pi) = (1 - pi) var0(h) + pi var1(h)`, floored. Fitted sets have
/// `m_slope = 0` and `var0 = var1`; the oracle forms need the propensity
/// because treatment enters `E[Y|X]` through it.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet {
    pub mu0: Curve,
    pub mu1: Curve,
    pub m: Curve,
    pub m_slope: f64,
    pub var0: Curve,
    pub var1: Curve,
    pub sigma_floor: f64,
    pub tag: FitTag,
}

/// Per-unit nuisance values at given scores and propensities.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub m: Vec<f64>,
    pub var0: Vec<f64>,
    pub var1: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NuisanceSet {
    /// The analytic nuisances of a synthetic data-generating process.
    pub fn oracle(dgp: DgpTag, psi: f64) -> Self {
        let (var0, var1) = match dgp {
            // mu (1 - mu) with mu = h + s
            DgpTag::Bernoulli => {
                let bern = |s: f64| Curve::Polynomial(vec![s - s * s, 1.0 - 2.0 * s, -1.0]);
                (bern(0.0), bern(psi))
            }
            // U ~ Uniform(-0.2h, 0.2h)
            DgpTag::PartiallyLinear => {
                let v = Curve::Polynomial(vec![0.0, 0.0, 0.04 / 3.0]);
                (v.clone(), v)
            }
        };
        NuisanceSet {
            mu0: Curve::Polynomial(vec![0.0, 1.0]),
            mu1: Curve::Polynomial(vec![psi, 1.0]),
            m: Curve::Polynomial(vec![0.0, 1.0]),
            m_slope: psi,
            var0,
            var1,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            tag: FitTag::Oracle,
        }
    }

    pub fn with_sigma_floor(mut self, floor: f64) -> Self {
        self.sigma_floor = floor;
        self
    }

    pub fn evaluate(&self, h: &[f64], pi: &[f64]) -> NuisanceValues {
        let n = h.len();
        let mut out = NuisanceValues {
            mu0: Vec::with_capacity(n),
            mu1: Vec::with_capacity(n),
            m: Vec::with_capacity(n),
            var0: Vec::with_capacity(n),
            var1: Vec::with_capacity(n),
            sigma: Vec::with_capacity(n),
        };
        for (&h, &p) in h.iter().zip(pi) {
            let (v0, v1) = (self.var0.eval(h), self.var1.eval(h));
            out.mu0.push(self.mu0.eval(h));
            out.mu1.push(self.mu1.eval(h));
            out.m.push(self.m.eval(h) + self.m_slope * p);
            out.var0.push(v0);
            out.var1.push(v1);
            out.sigma.push(((1.0 - p) * v0 + p * v1).max(self.sigma_floor));
        }
        out
    }
}

/// Fits outcome regressions on a sample independent of the one used for
/// estimation.
pub fn fit_nuisances(data: &Sample, method: FitMethod, sigma_floor: f64) -> Result<NuisanceSet, EstimationError> {
    if !(sigma_floor > 0.0) {
        return Err(EstimationError::Invalid("sigma floor must be positive".into()));
    }
    match method {
        FitMethod::Binned { bins } => fit_binned(data, bins, sigma_floor),
        FitMethod::Polynomial { degree } => fit_polynomial(data, degree, sigma_floor),
    }
}

fn score_range(h: &[f64]) -> (f64, f64) {
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn fit_binned(data: &Sample, bins: usize, sigma_floor: f64) -> Result<NuisanceSet, EstimationError> {
    if bins == 0 {
        return Err(EstimationError::Invalid("bin count must be positive".into()));
    }
    let (lo, hi) = score_range(&data.h);
    let mut bins = bins;
    loop {
        // sums and counts per (bin, arm)
        let mut s = vec![[0.0f64; 2]; bins];
        let mut c = vec![[0usize; 2]; bins];
        for i in 0..data.n() {
            let b = bin_of(data.h[i], lo, hi, bins);
            let z = usize::from(data.z[i]);
            s[b][z] += data.y[i];
            c[b][z] += 1;
        }
        if c.iter().all(|cc| cc[0] > 0 && cc[1] > 0) {
            let curve = |f: &dyn Fn(usize) -> f64| Curve::Binned {
                lo,
                hi,
                values: (0..bins).map(f).collect(),
            };
            let mu0 = curve(&|b| s[b][0] / c[b][0] as f64);
            let mu1 = curve(&|b| s[b][1] / c[b][1] as f64);
            let m = curve(&|b| (s[b][0] + s[b][1]) / (c[b][0] + c[b][1]) as f64);
            let mut rs = vec![0.0; bins];
            for i in 0..data.n() {
                let b = bin_of(data.h[i], lo, hi, bins);
                rs[b] += (data.y[i] - m.eval(data.h[i])).powi(2);
            }
            let var = curve(&|b| rs[b] / (c[b][0] + c[b][1]) as f64);
            return Ok(NuisanceSet {
                mu0,
                mu1,
                m,
                m_slope: 0.0,
                var0: var.clone(),
                var1: var,
                sigma_floor,
                tag: FitTag::Binned,
            });
        }
        if bins == 1 {
            return Err(EstimationError::Fit(
                "a treatment arm is empty in the fitting sample".into(),
            ));
        }
        bins /= 2;
    }
}

fn least_squares(h: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>, EstimationError> {
    if h.len() <= degree {
        return Err(EstimationError::Fit(format!(
            "{} points cannot determine a degree-{degree} polynomial",
            h.len()
        )));
    }
    let x = DMatrix::from_fn(h.len(), degree + 1, |i, j| h[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let coef = x
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| EstimationError::Fit(e.to_string()))?;
    Ok(coef.iter().copied().collect())
}

fn fit_polynomial(data: &Sample, degree: usize, sigma_floor: f64) -> Result<NuisanceSet, EstimationError> {
    let arm = |z: bool| -> (Vec<f64>, Vec<f64>) {
        (0..data.n())
            .filter(|&i| data.z[i] == z)
            .map(|i| (data.h[i], data.y[i]))
            .unzip()
    };
    let (h0, y0) = arm(false);
    let (h1, y1) = arm(true);
    let mu0 = Curve::Polynomial(least_squares(&h0, &y0, degree)?);
    let mu1 = Curve::Polynomial(least_squares(&h1, &y1, degree)?);
    let m = Curve::Polynomial(least_squares(&data.h, &data.y, degree)?);
    let r2: Vec<f64> = (0..data.n()).map(|i| (data.y[i] - m.eval(data.h[i])).powi(2)).collect();
    let var = Curve::Polynomial(least_squares(&data.h, &r2, degree)?);
    Ok(NuisanceSet {
        mu0,
        mu1,
        m,
        m_slope: 0.0,
        var0: var.clone(),
        var1: var,
        sigma_floor,
        tag: FitTag::Polynomial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, ScoreLaw};
    use rand::Rng;

    fn bernoulli_sample(n: usize, seed: u64) -> Sample {
        let cohort = generate_cohort(n, 1, -0.1, &ScoreLaw::default(), seed).unwrap();
        let mut r = rng::stream(seed, 99);
        let z: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let y = cohort.units().iter().zip(&z).map(|(u, &z)| u.outcome(z)).collect();
        Sample::new(cohort.scores(), z, y, vec![0; n]).unwrap()
    }

    #[test]
    fn constant_outcomes_fit_exactly() {
        let h: Vec<f64> = (0..200).map(|i| 0.1 + 0.8 * i as f64 / 199.0).collect();
        let z: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let s = Sample::new(h.clone(), z, vec![0.3; 200], vec![0; 200]).unwrap();
        for method in [FitMethod::Binned { bins: 10 }, FitMethod::Polynomial { degree: 2 }] {
            let f = fit_nuisances(&s, method, DEFAULT_SIGMA_FLOOR).unwrap();
            let v = f.evaluate(&h, &vec![0.5; 200]);
            for i in 0..200 {
                assert!((v.mu0[i] - 0.3).abs() < 1e-12);
                assert!((v.mu1[i] - 0.3).abs() < 1e-12);
                assert!((v.m[i] - 0.3).abs() < 1e-12);
                assert!(v.sigma[i] >= DEFAULT_SIGMA_FLOOR);
            }
        }
    }

    #[test]
    fn binned_fit_improves_with_sample_size() {
        let mse = |n: usize| {
            let s = bernoulli_sample(n, 5);
            let f = fit_nuisances(&s, FitMethod::Binned { bins: 20 }, DEFAULT_SIGMA_FLOOR).unwrap();
            // L2 error under the score law
            let grid = generate_cohort(5000, 1, -0.1, &ScoreLaw::default(), 77).unwrap().scores();
            let v = f.evaluate(&grid, &vec![0.5; 5000]);
            grid.iter().zip(&v.mu0).map(|(h, m)| (h - m).powi(2)).sum::<f64>() / 5000.0
        };
        let (big, small) = (mse(10_000), mse(1_000));
        assert!(big < small, "{big} vs {small}");
    }

    #[test]
    fn empty_arms_coarsen_then_fail() {
        let h: Vec<f64> = (0..40).map(|i| 0.1 + 0.02 * i as f64).collect();
        // treated units only in the lower half
        let z: Vec<bool> = (0..40).map(|i| i < 20 && i % 2 == 0).collect();
        let s = Sample::new(h, z, vec![1.0; 40], vec![0; 40]).unwrap();
        let f = fit_nuisances(&s, FitMethod::Binned { bins: 8 }, DEFAULT_SIGMA_FLOOR).unwrap();
        assert!(matches!(&f.mu1, Curve::Binned { values, .. } if values.len() == 1));
        let none = Sample::new(vec![0.2, 0.3], vec![false, false], vec![0.0, 1.0], vec![0, 0]).unwrap();
        assert!(matches!(
            fit_nuisances(&none, FitMethod::Binned { bins: 4 }, DEFAULT_SIGMA_FLOOR),
            Err(EstimationError::Fit(_))
        ));
    }

    #[test]
    fn oracle_forms() {
        let o = NuisanceSet::oracle(DgpTag::Bernoulli, -0.1);
        let v = o.evaluate(&[0.4], &[0.25]);
        assert!((v.mu0[0] - 0.4).abs() < 1e-15);
        assert!((v.mu1[0] - 0.3).abs() < 1e-15);
        assert!((v.m[0] - (0.4 - 0.025)).abs() < 1e-15);
        let want = 0.75 * 0.4 * 0.6 + 0.25 * 0.3 * 0.7;
        assert!((v.sigma[0] - want).abs() < 1e-15);
        let o = NuisanceSet::oracle(DgpTag::PartiallyLinear, -0.1);
        let v = o.evaluate(&[0.5], &[0.9]);
        assert!((v.sigma[0] - 0.01 / 3.0).abs() < 1e-15);
        assert_eq!(o.tag, FitTag::Oracle);
    }

    #[test]
    fn polynomial_recovers_quadratic() {
        let h: Vec<f64> = (0..50).map(|i| 0.1 + 0.016 * i as f64).collect();
        let y: Vec<f64> = h.iter().map(|h| 1.0 - 2.0 * h + 3.0 * h * h).collect();
        let c = least_squares(&h, &y, 2).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9 && (c[1] + 2.0).abs() < 1e-9 && (c[2] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn split_is_a_partition() {
        let (a, b) = split_indices(11, 3);
        assert_eq!(a.len(), 5);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(split_indices(11, 3), (a, b));
    }
}
