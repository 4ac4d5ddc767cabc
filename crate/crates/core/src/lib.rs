//! Simulation library for stress-testing stablecoin reserve controllers.
//!
//! The crate couples an agent-based market simulator with a reserve
//! allocation pipeline: behavioral trust scoring of market participants,
//! trust-weighted risk aggregation, stress-augmented covariance blending,
//! and a constrained mean-variance optimizer. A small CLI (`mvfc`) drives
//! batch experiments over shock scenarios and adversarial populations.

pub mod agents;
pub mod cli;
pub mod config;
pub mod controller;
pub mod market;
pub mod metrics;
pub mod optimizer;
pub mod risk;
pub mod rng;
pub mod trust;
