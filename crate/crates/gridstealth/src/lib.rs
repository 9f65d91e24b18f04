//! Stealthy Gaussian data-injection attacks against DC power-system state
//! estimation.
//!
//! The crate builds the linearized DC observation model from a
//! MATPOWER-style case file, constructs the information-theoretically
//! optimal Gaussian attack covariance, evaluates its utility (mutual
//! information plus KL detectability, in nats), runs likelihood-ratio
//! detection against it, and reproduces the perfect- and
//! imperfect-statistics experiments on the IEEE 30-bus system.

pub mod attack_core;
pub mod dc_model;
pub mod detection;
pub mod error;
pub mod experiments;
pub mod matpower;
pub mod stat_models;

pub use error::{Error, Result};
