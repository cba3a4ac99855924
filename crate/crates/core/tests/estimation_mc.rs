use queuerand::cohort::{generate_cohort, DgpTag, ScoreLaw};
use queuerand::estimation::{
    estimate_dr_ate, multiplier_bootstrap, variance_dr_formula, Estimate, NuisanceSet, Sample,
};
use queuerand::mechanism::{allocate, sample_queues, PolicyMatrix, QueueSpec, ServiceMode};
use queuerand::propensity::{marginal_propensity, AlphaVector};
use statrs::distribution::{ContinuousCDF, Normal};

const PSI: f64 = -0.1;
const N: usize = 2000;
const REPS: u64 = 1000;

struct Setup {
    spec: QueueSpec,
    policy: PolicyMatrix,
    pi: Vec<f64>,
    nuisances: NuisanceSet,
}

fn setup() -> Setup {
    let p = [0.5, 0.5];
    let spec = QueueSpec::with_uniform_arrivals(N, p.to_vec(), 0.5, 1, ServiceMode::Strict).unwrap();
    let alpha = AlphaVector::from_budget(0.5, &p).unwrap();
    let policy = PolicyMatrix::uniform(N, &p).unwrap();
    let pi = policy.rows().map(|r| marginal_propensity(r, &alpha)).collect();
    Setup {
        spec,
        policy,
        pi,
        nuisances: NuisanceSet::oracle(DgpTag::Bernoulli, PSI),
    }
}

fn replicate(s: &Setup, seed: u64) -> (Estimate, Vec<f64>) {
    let cohort = generate_cohort(N, 1, PSI, &ScoreLaw::default(), seed).unwrap();
    let queues = sample_queues(&s.policy, seed);
    let trace = allocate(&cohort, &queues, &s.spec).unwrap();
    let sample = Sample::from_trace(&cohort, &trace).unwrap();
    (estimate_dr_ate(&sample, &s.pi, &s.nuisances, 0.01).unwrap(), cohort.scores())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[test]
fn dr_is_unbiased_normal_and_matches_its_variance_formula() {
    let s = setup();
    let mut points = Vec::new();
    let mut covered = 0;
    let mut formula = Vec::new();
    for seed in 0..REPS {
        let (e, h) = replicate(&s, seed);
        points.push(e.report.point);
        covered += usize::from(e.report.covers(PSI));
        let v0: Vec<f64> = h.iter().map(|h| h * (1.0 - h)).collect();
        let v1: Vec<f64> = h.iter().map(|h| (h + PSI) * (1.0 - h - PSI)).collect();
        formula.push(variance_dr_formula(&s.pi, &v0, &v1, &vec![PSI; N]).unwrap() / N as f64);
    }
    let (m, sd) = mean_sd(&points);
    let mc_se = sd / (REPS as f64).sqrt();
    assert!((m - PSI).abs() <= 3.0 * mc_se, "mean {m}, mc se {mc_se}");
    let coverage = covered as f64 / REPS as f64;
    assert!((0.93..=0.97).contains(&coverage), "coverage {coverage}");
    let want = formula.iter().sum::<f64>() / formula.len() as f64;
    assert!((sd * sd / want - 1.0).abs() <= 0.15, "MC variance {} vs formula {want}", sd * sd);

    // Kolmogorov-Smirnov against the normal with estimated location and scale
    let mut z: Vec<f64> = points.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let norm = Normal::standard();
    let n = z.len() as f64;
    let d = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = norm.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn bootstrap_interval_covers() {
    let s = setup();
    let mut covered = 0;
    for seed in 0..REPS {
        let (e, _) = replicate(&s, 10_000 + seed);
        let boot = multiplier_bootstrap(&e.influence, 400, seed);
        let e = e.with_bootstrap(&boot);
        covered += usize::from(e.report.covers(PSI));
    }
    let coverage = covered as f64 / REPS as f64;
    assert!((0.93..=0.97).contains(&coverage), "bootstrap coverage {coverage}");
}
