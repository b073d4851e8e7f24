//! Experiment driver behind the `nia` command line: dataset generation,
//! single protocol runs, depth scans and the verification suites.

mod config;
pub mod io;
mod generate;
mod run;
mod scan;
mod verify;

pub use config::{ExperimentConfig, GraphConfig, InstanceConfig, ScanConfig, VerifyConfig};
pub use generate::{cmd_generate, GeneratedDataset};
pub use run::{cmd_run, run_single, RunReport};
pub use scan::{aggregate_scan, cmd_scan, scan_seed, ScanPoint, ScanRow};
pub use verify::{cmd_verify, minimize_eta_variance, SuiteResult, VerifyReport};
