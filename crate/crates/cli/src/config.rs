use std::path::{Path, PathBuf};

use queuerand::cohort::{DgpTag, ScoreLaw};
use queuerand::design::{Objective, Regularizer};
use queuerand::mechanism::{QueueSpec, ServiceMode};
use queuerand::propensity::AlphaVector;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: CohortConfig,
    pub mechanism: MechanismConfig,
    pub design: DesignConfig,
    pub estimation: EstimationConfig,
    pub execution: ExecutionConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n: usize,
    pub tau: u32,
    pub psi: f64,
    pub h_law: ScoreLaw,
    pub dgp: DgpTag,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n: 2000,
            tau: 1,
            psi: -0.1,
            h_law: ScoreLaw::default(),
            dgp: DgpTag::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Strict,
    Rationed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConfig {
    pub k: usize,
    /// Queue proportions; equal sizes when absent.
    pub p: Option<Vec<f64>>,
    pub beta: f64,
    pub mode: ModeName,
    /// Per-queue treatment probabilities for rationed service.
    pub alpha: Option<Vec<f64>>,
    /// Explicit per-period budgets; derived from `beta` when absent.
    pub budgets: Option<Vec<i64>>,
    /// Rationed targets compared by the bias study; defaults to
    /// (0.6, 0.4), (0.8, 0.2), (0.95, 0.05) for two queues.
    pub alpha_configs: Option<Vec<Vec<f64>>>,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            k: 2,
            p: None,
            beta: 0.5,
            mode: ModeName::Strict,
            alpha: None,
            budgets: None,
            alpha_configs: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub objective: Objective,
    /// Utility floors for the optimized sweeps; an evenly spaced grid from
    /// the RCT utility towards the maximum when absent.
    pub c_grid: Option<Vec<f64>>,
    pub grid_points: usize,
    /// Single floor used by `estimate`; the RCT is used when absent.
    pub c: Option<f64>,
    pub kappa: Option<f64>,
    pub regularizer: Regularizer,
    pub strategies: Vec<String>,
    pub switch_grid: Option<Vec<f64>>,
    pub softmax_grid: Option<Vec<f64>>,
    pub softmax_cap: f64,
    /// Bias-study utility levels as fractions of the way from the RCT
    /// utility to the largest utility feasible under every alpha config.
    pub bias_levels: Vec<f64>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            objective: Objective::Exogenous,
            c_grid: None,
            grid_points: 10,
            c: None,
            kappa: None,
            regularizer: Regularizer::NegEntropy,
            strategies: ["optimized_exogenous", "optimized_endogenous", "switch", "greedy_softmax", "rct"]
                .map(String::from)
                .to_vec(),
            switch_grid: None,
            softmax_grid: None,
            softmax_cap: 1.0,
            bias_levels: vec![0.0, 0.2, 0.4, 0.6, 0.8],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMethod {
    Oracle,
    Binned,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMethod {
    Asymptotic,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Wald,
    Bootstrap,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub nuisance: NuisanceMethod,
    pub bins: usize,
    pub degree: usize,
    pub sigma_floor: f64,
    pub bootstrap_reps: usize,
    pub interval: IntervalMethod,
    pub gamma: f64,
    pub relevance_floor: f64,
    pub estimators: Vec<String>,
    pub propensity: PropensityMethod,
    /// CSV of an observed realization (`h,queue,treated,y`); a fresh
    /// simulation is used when absent.
    pub trace: Option<PathBuf>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            nuisance: NuisanceMethod::Oracle,
            bins: 10,
            degree: 3,
            sigma_floor: queuerand::estimation::DEFAULT_SIGMA_FLOOR,
            bootstrap_reps: queuerand::estimation::DEFAULT_BOOTSTRAP_REPS,
            interval: IntervalMethod::Wald,
            gamma: 0.01,
            relevance_floor: 1e-3,
            estimators: ["dr_ate", "pliv", "iv_ratio"].map(String::from).to_vec(),
            propensity: PropensityMethod::Asymptotic,
            trace: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub seed: u64,
    /// Monte Carlo replications (propensity tables, bias study).
    pub mc_replications: usize,
    /// Realizations averaged for the treated-mass check.
    pub mass_replications: usize,
    /// Cohort sizes traced by `check-propensity`.
    pub n_grid: Vec<usize>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            seed: 0,
            mc_replications: 200,
            mass_replications: 50,
            n_grid: vec![500, 1000, 2000],
            threads: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.cohort;
        if c.n < 2 {
            return Err(invalid("cohort.n", format!("need at least 2 units, got {}", c.n)));
        }
        if c.tau == 0 {
            return Err(invalid("cohort.tau", "must be at least 1"));
        }
        if !c.psi.is_finite() {
            return Err(invalid("cohort.psi", "must be finite"));
        }
        c.h_law.validate().map_err(|e| invalid("cohort.h_law", e.to_string()))?;
        if c.dgp == DgpTag::Bernoulli {
            let (lo, hi) = c.h_law.support();
            if lo + c.psi < 0.0 || hi + c.psi > 1.0 {
                return Err(invalid("cohort.psi", "h + psi must stay inside [0,1] over the score support"));
            }
        }

        let m = &self.mechanism;
        if m.k < 2 {
            return Err(invalid("mechanism.k", format!("need at least 2 queues, got {}", m.k)));
        }
        let p = self.p();
        if p.len() != m.k {
            return Err(invalid("mechanism.p", format!("has {} entries for k = {}", p.len(), m.k)));
        }
        if p.iter().any(|x| !(*x > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("mechanism.p", "entries must be positive and sum to 1"));
        }
        if !(m.beta > 0.0 && m.beta < 1.0) {
            return Err(invalid("mechanism.beta", format!("must lie in (0,1), got {}", m.beta)));
        }
        if m.mode == ModeName::Rationed && m.alpha.is_none() {
            return Err(invalid("mechanism.alpha", "required for rationed mode"));
        }
        if m.alpha.is_some() {
            self.alpha().map_err(|e| invalid("mechanism.alpha", e))?;
        }
        if let Some(b) = &m.budgets {
            if b.len() != c.tau as usize {
                return Err(invalid("mechanism.budgets", format!("need {} periods, got {}", c.tau, b.len())));
            }
            if b.iter().any(|&x| x < 0) {
                return Err(invalid("mechanism.budgets", "budgets must be nonnegative"));
            }
        }
        for a in m.alpha_configs.iter().flatten() {
            AlphaVector::custom(a.clone(), m.beta, &p).map_err(|e| invalid("mechanism.alpha_configs", e.to_string()))?;
        }

        let d = &self.design;
        if d.grid_points < 2 {
            return Err(invalid("design.grid_points", "need at least 2 points"));
        }
        if let Some(k) = d.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(invalid("design.kappa", "must be positive"));
            }
        }
        if let Some(g) = &d.c_grid {
            if g.is_empty() || g.iter().any(|x| !x.is_finite()) {
                return Err(invalid("design.c_grid", "must be a nonempty list of finite values"));
            }
        }
        if let Some(c) = d.c {
            if !c.is_finite() {
                return Err(invalid("design.c", "must be finite"));
            }
        }
        let registry = queuerand::design::StrategyRegistry::default();
        if let Some(s) = d.strategies.iter().find(|s| registry.get(s).is_none()) {
            return Err(invalid("design.strategies", format!("unknown strategy {s:?}; known: {:?}", registry.names())));
        }
        if let Some(g) = &d.switch_grid {
            if g.iter().any(|x| !(0.0..1.0).contains(x)) {
                return Err(invalid("design.switch_grid", "switch strengths must lie in [0,1)"));
            }
        }
        if let Some(g) = &d.softmax_grid {
            if g.iter().any(|x| !(*x > 0.0)) {
                return Err(invalid("design.softmax_grid", "softmax scales must be positive"));
            }
        }
        if !(d.softmax_cap > 0.0 && d.softmax_cap <= 1.0) {
            return Err(invalid("design.softmax_cap", "must lie in (0,1]"));
        }
        if d.bias_levels.is_empty() || d.bias_levels.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(invalid("design.bias_levels", "fractions must lie in [0,1]"));
        }

        let e = &self.estimation;
        if e.nuisance == NuisanceMethod::Binned && e.bins < 1 {
            return Err(invalid("estimation.bins", "must be at least 1"));
        }
        if !(e.sigma_floor > 0.0) {
            return Err(invalid("estimation.sigma_floor", "must be positive"));
        }
        if e.interval == IntervalMethod::Bootstrap && e.bootstrap_reps < 2 {
            return Err(invalid("estimation.bootstrap_reps", "need at least 2 replicates for bootstrap intervals"));
        }
        if !(0.0..0.5).contains(&e.gamma) {
            return Err(invalid("estimation.gamma", "must lie in [0, 0.5)"));
        }
        if !(e.relevance_floor >= 0.0) {
            return Err(invalid("estimation.relevance_floor", "must be nonnegative"));
        }
        let est = queuerand::estimation::EstimatorRegistry::default();
        if e.estimators.is_empty() {
            return Err(invalid("estimation.estimators", "list at least one estimator"));
        }
        if let Some(s) = e.estimators.iter().find(|s| est.get(s).is_none()) {
            return Err(invalid("estimation.estimators", format!("unknown estimator {s:?}; known: {:?}", est.names())));
        }

        let x = &self.execution;
        if x.mc_replications == 0 {
            return Err(invalid("execution.mc_replications", "must be at least 1"));
        }
        if x.mass_replications == 0 {
            return Err(invalid("execution.mass_replications", "must be at least 1"));
        }
        if x.n_grid.is_empty() || x.n_grid.iter().any(|&n| n < 2) {
            return Err(invalid("execution.n_grid", "cohort sizes must be at least 2"));
        }
        Ok(())
    }

    pub fn p(&self) -> Vec<f64> {
        self.mechanism
            .p
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.mechanism.k as f64; self.mechanism.k])
    }

    /// Limiting per-queue treatment probabilities of the configured mechanism.
    pub fn alpha(&self) -> Result<AlphaVector, String> {
        let p = self.p();
        match &self.mechanism.alpha {
            Some(a) => AlphaVector::custom(a.clone(), self.mechanism.beta, &p),
            None => AlphaVector::from_budget(self.mechanism.beta, &p),
        }
        .map_err(|e| e.to_string())
    }

    pub fn alpha_configs(&self) -> Result<Vec<Vec<f64>>, ConfigError> {
        match &self.mechanism.alpha_configs {
            Some(a) if !a.is_empty() => Ok(a.clone()),
            Some(_) => Err(invalid("mechanism.alpha_configs", "list at least one config")),
            None if self.mechanism.k == 2 => Ok(vec![vec![0.6, 0.4], vec![0.8, 0.2], vec![0.95, 0.05]]),
            None => Err(invalid("mechanism.alpha_configs", "required when k != 2")),
        }
    }

    pub fn service_mode(&self) -> ServiceMode {
        match self.mechanism.mode {
            ModeName::Strict => ServiceMode::Strict,
            ModeName::Rationed => ServiceMode::Rationed {
                alpha_target: self.mechanism.alpha.clone().unwrap_or_default(),
            },
        }
    }

    /// Mechanism for a cohort of `n` units.
    pub fn queue_spec(&self, n: usize, mode: ServiceMode) -> Result<QueueSpec, String> {
        let m = &self.mechanism;
        let spec = match &m.budgets {
            Some(b) => QueueSpec::new(self.p(), m.beta, b.clone(), mode),
            None => QueueSpec::with_uniform_arrivals(n, self.p(), m.beta, self.cohort.tau, mode),
        };
        spec.map_err(|e| e.to_string())
    }
}
