//! The allocation mechanism: queue sampling, budgeted priority/FIFO service,
//! and propensity oracles (Monte Carlo and exact enumeration).
//!
//! Queues are 0-indexed internally; queue 0 has the highest priority.
//! Periods are 1-indexed, matching "arrived by period t" iff `A <= t`.

mod allocate;
mod montecarlo;
mod oracle;
mod policy;
mod spec;

use thiserror::Error;

pub use allocate::{allocate, treated_mass_profile, AllocationTrace, ServiceCounts};
pub use montecarlo::{mc_propensities, McOptions, PropensitySource, PropensityTable};
pub use oracle::{exact_oracle, ExactOracle, World};
pub use policy::{sample_queues, sample_queues_with, PolicyMatrix};
pub use spec::{apportion, make_budgets, QueueSpec, ServiceMode};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MechanismError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("refusing to enumerate: {0}")]
    TooLarge(String),
}
