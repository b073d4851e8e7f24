use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{cyclic_path_assignment, AgentGraph, GraphFile};
use crate::quadrature::QuadOptions;
use crate::solver::FitOptions;

/// Top-level experiment configuration, read from JSON. Unknown keys are
/// rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub instance: Option<InstanceConfig>,
    #[serde(default)]
    pub graph: Option<GraphConfig>,
    #[serde(default)]
    pub solver: FitOptions,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed replicates run concurrently on this many threads (0 = rayon default).
    #[serde(default)]
    pub replicates: usize,
    /// Also write the flat binary logit dump from `run`.
    #[serde(default)]
    pub dump_logits: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceConfig {
    Hard { k: usize, n: usize, seeds: Vec<u64> },
    DatasetFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConfig {
    CyclicPath { depth: usize },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// Path depths `D`.
    pub depths: Vec<usize>,
    /// Coverage windows `M`; empty means `M = k`.
    pub windows: Vec<usize>,
    /// Pass counts `p`, scanned at `D = k p`.
    pub passes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub k: usize,
    pub depth: usize,
    pub n: usize,
    pub seed: u64,
    pub perturbations: usize,
    pub perturbation_scale: f64,
    pub pinsker_pairs: usize,
    pub closed_form_passes: Vec<usize>,
    pub closed_form_scales: Vec<f64>,
    pub scaling_passes: Vec<usize>,
    pub h_grid: Vec<f64>,
    pub noise_scale: f64,
    pub noise_pairs: Vec<(f64, f64)>,
    pub noise_samples: usize,
    pub quadrature: QuadOptions,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            k: 4,
            depth: 16,
            n: 100_000,
            seed: 0,
            perturbations: 20,
            perturbation_scale: 0.1,
            pinsker_pairs: 10_000,
            closed_form_passes: vec![2, 3, 4, 5, 6],
            closed_form_scales: vec![0.3, 0.7, 1.0],
            scaling_passes: vec![1, 2, 4, 8, 16, 64],
            h_grid: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            noise_scale: 1.0,
            noise_pairs: vec![(0.0, 0.5), (0.5, 1.0), (1.0, 2.0)],
            noise_samples: 1_000_000,
            quadrature: QuadOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Configuration used by `verify` when no file is given: the suites run at
    /// a 1e-12 gradient tolerance.
    pub fn verify_default() -> Self {
        Self {
            instance: None,
            graph: None,
            solver: FitOptions::default().with_grad_tol(1e-12),
            scan: ScanConfig::default(),
            verify: VerifyConfig::default(),
            output_dir: default_output_dir(),
            replicates: 0,
            dump_logits: false,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn instance(&self) -> Result<&InstanceConfig> {
        self.instance
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing `instance` section".into()))
    }

    /// Replaces the seed list with a single seed.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(InstanceConfig::Hard { seeds, .. }) = &mut self.instance {
            *seeds = vec![seed];
        }
        self.verify.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if let Some(instance) = &self.instance {
            match instance {
                InstanceConfig::Hard { k, n, seeds } => {
                    if *k < 2 {
                        return Err(Error::InvalidConfig(format!("k = {k}, need k >= 2")));
                    }
                    if *n == 0 {
                        return Err(Error::InvalidConfig("n must be >= 1".into()));
                    }
                    if seeds.is_empty() {
                        return Err(Error::InvalidConfig("seed list is empty".into()));
                    }
                    let distinct: BTreeSet<_> = seeds.iter().collect();
                    if distinct.len() != seeds.len() {
                        return Err(Error::InvalidConfig("seeds must be distinct".into()));
                    }
                }
                InstanceConfig::DatasetFile { path } => require_file(path)?,
            }
        }
        match &self.graph {
            Some(GraphConfig::File { path }) => require_file(path)?,
            Some(GraphConfig::CyclicPath { depth: 0 }) => {
                return Err(Error::InvalidConfig("cyclic path depth must be >= 1".into()))
            }
            _ => {}
        }
        if self.scan.windows.contains(&0) || self.scan.depths.contains(&0) || self.scan.passes.contains(&0) {
            return Err(Error::InvalidConfig("scan grids must hold positive values".into()));
        }
        Ok(())
    }

    /// Builds the configured graph for a dataset with `d` features.
    pub fn build_graph(&self, d: usize) -> Result<AgentGraph> {
        match &self.graph {
            Some(GraphConfig::CyclicPath { depth }) => cyclic_path_assignment(d, *depth),
            Some(GraphConfig::File { path }) => {
                let graph = GraphFile::load(path)?.into_graph()?;
                if graph.d() != d {
                    return Err(Error::InvalidConfig(format!(
                        "graph file declares d = {}, dataset has d = {d}",
                        graph.d()
                    )));
                }
                Ok(graph)
            }
            None => Err(Error::InvalidConfig("missing `graph` section".into())),
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("file {} does not exist", path.display())))
    }
}
