//! Simulation of ML model version lifecycles on an edge cluster.
//!
//! A [`Scenario`] describes model classes, worker nodes and release
//! cadence; [`simulator::run`] plays one replication under an update policy
//! and returns per-request delay records plus an optional decision log.

pub mod cluster;
pub mod domain;
pub mod metrics;
pub mod policies;
pub mod report;
pub mod repository;
pub mod rng;
pub mod scenario;
pub mod simulator;

pub use domain::{AppClass, ModelClass, ResourceVector, VersionId};
pub use policies::PolicyKind;
pub use scenario::{Horizon, Scenario, ScenarioError};
pub use simulator::{run, RunOptions, RunOutput, RunStats};
