//! Randomized queue-assignment experiments for priority waitlists.
//!
//! * [`cohort`]: populations and synthetic data-generating processes.
//! * [`mechanism`]: the budgeted priority/FIFO allocation process and its
//!   propensity oracles.
//! * [`propensity`]: closed-form asymptotic propensities and instruments.
//! * [`estimation`]: DR, PLIV and IV-ratio estimators, variance formulas,
//!   bootstrap, and the complier decomposition check.
//! * [`design`]: optimal and heuristic queue-assignment designs behind a
//!   common [`design::DesignStrategy`] trait.

pub mod cohort;
pub mod design;
pub mod estimation;
pub mod mechanism;
pub mod propensity;
pub mod rng;
