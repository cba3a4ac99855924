use std::fmt;

use super::bootstrap::BootstrapSummary;

pub const WALD_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    DrAte,
    Pliv,
    IvRatio,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::DrAte => "dr_ate",
            Method::Pliv => "pliv",
            Method::IvRatio => "iv_ratio",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub method: Method,
    pub bootstrap_reps: Option<usize>,
}

impl EstimateReport {
    pub fn wald(point: f64, se: f64, n: usize, method: Method) -> Self {
        EstimateReport {
            point,
            se,
            ci_low: point - WALD_Z * se,
            ci_high: point + WALD_Z * se,
            n,
            method,
            bootstrap_reps: None,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// A point estimate together with its estimated influence values.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub report: EstimateReport,
    pub influence: Vec<f64>,
}

impl Estimate {
    /// Replaces the Wald interval with a multiplier-bootstrap interval.
    pub fn with_bootstrap(mut self, boot: &BootstrapSummary) -> Self {
        self.report.se = boot.se;
        self.report.ci_low = self.report.point + boot.q_low;
        self.report.ci_high = self.report.point + boot.q_high;
        self.report.bootstrap_reps = Some(boot.reps);
        self
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation over root n.
pub(crate) fn standard_error(phi: &[f64]) -> f64 {
    let n = phi.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(phi);
    let ss: f64 = phi.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
}
