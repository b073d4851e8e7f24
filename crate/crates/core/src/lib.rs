//! Networked information aggregation with logistic agents.
//!
//! Agents sit on a DAG, each observing a subset of the features. In
//! topological order every agent fits a logistic regression on its own
//! features plus the logit columns published by its parents, then publishes
//! its own logit column. This crate runs that protocol on in-memory datasets,
//! measures the sink's excess loss against the full-feature optimum, and
//! provides the analytic pieces (KL/Pinsker machinery, the cyclic hard
//! instance, pass-predictor closed forms) used to check the upper and lower
//! rate bounds numerically.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod instance;
pub mod metrics;
pub mod protocol;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod sum;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use graph::{AgentGraph, Coverage};
pub use instance::{HardInstanceSpec, PassPredictor};
pub use metrics::TheoryReport;
pub use protocol::{AgentModel, ProtocolTrace};
pub use solver::{FitOptions, FitResult, FitStatus};
