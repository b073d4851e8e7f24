use serde::Serialize;

use super::config::{ExperimentConfig, InstanceConfig};
use super::io::{read_dataset, write_atomic, write_json};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::graph::{AgentGraph, Coverage};
use crate::instance::{generate_hard_instance, HardInstanceSpec};
use crate::metrics::{residual_bound_lhs, stable_block, StableBlock, TheoryReport};
use crate::protocol::{excess_for, fit_global, run_protocol, ProtocolTrace, SinkExcess};
use crate::solver::FitOptions;

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub m: usize,
    #[serde(flatten)]
    pub coverage: Coverage,
}

/// Summary of one protocol run, serialized as `report_<tag>.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub tag: String,
    pub n: usize,
    pub d: usize,
    pub num_agents: usize,
    pub all_converged: bool,
    pub global_converged: bool,
    pub global_loss: f64,
    pub sinks: Vec<SinkExcess>,
    /// Excess of the last agent in topological order.
    pub excess: f64,
    pub max_edge_increase: Option<f64>,
    /// `null` when the graph is not a path or shorter than the window.
    pub coverage: Option<CoverageReport>,
    pub stable_block: Option<StableBlock>,
    /// Present only when the path satisfies M-coverage.
    pub theory: Option<TheoryReport>,
    pub residual_bound_lhs: Option<f64>,
    pub residual_bound_holds: Option<bool>,
    pub upper_bound_holds: Option<bool>,
}

/// The comparator is always fitted without ridge: it stands for the
/// unregularized full-feature optimum.
pub(crate) fn comparator_options(solver: &FitOptions) -> FitOptions {
    FitOptions {
        ridge: 0.0,
        intercept: false,
        ..*solver
    }
}

/// Runs the protocol on one dataset and evaluates the bound diagnostics.
pub fn run_single(
    config: &ExperimentConfig,
    dataset: &Dataset,
    graph: &AgentGraph,
    tag: &str,
) -> Result<(RunReport, ProtocolTrace)> {
    let trace = run_protocol(dataset, graph, &config.solver)?;
    let global = fit_global(dataset, &comparator_options(&config.solver))?;
    let sinks = trace
        .sinks()
        .iter()
        .map(|&s| excess_for(&trace, s, &global))
        .collect::<Result<Vec<_>>>()?;
    let excess = excess_for(&trace, trace.final_agent(), &global)?.excess;

    let m = config.scan.windows.first().copied().unwrap_or(dataset.d());
    let path = graph.path_order().ok().filter(|p| p.len() >= m);
    let mut report = RunReport {
        config_hash: config.hash(),
        tag: tag.to_string(),
        n: dataset.n(),
        d: dataset.d(),
        num_agents: graph.num_agents(),
        all_converged: trace.all_converged(),
        global_converged: global.converged,
        global_loss: global.loss,
        sinks,
        excess,
        max_edge_increase: trace.max_edge_increase(graph),
        coverage: None,
        stable_block: None,
        theory: None,
        residual_bound_lhs: None,
        residual_bound_holds: None,
        upper_bound_holds: None,
    };
    let Some(path) = path else {
        return Ok((report, trace));
    };

    let coverage = graph.check_m_coverage(m, dataset.d())?;
    let losses = trace.losses();
    let block = stable_block(&losses, m)?;
    report.coverage = Some(CoverageReport { m, coverage });
    report.stable_block = Some(block);
    if coverage.covered {
        let b_x = dataset.second_moment_bound();
        let theory = TheoryReport::new(b_x, global.l1_norm(), m, path.len(), block.drop)?;
        let (_, last) = block.span(m);
        let block_end = trace.logits(path[last]).expect("complete trace");
        let comparator = global.logits(dataset.features())?;
        let lhs = residual_bound_lhs(block_end, dataset.labels(), &comparator)?;
        report.residual_bound_lhs = Some(lhs);
        report.residual_bound_holds = Some(lhs <= theory.rhs_residual_bound);
        report.upper_bound_holds = Some(excess <= theory.rhs_convergence_bound);
        report.theory = Some(theory);
    }
    Ok((report, trace))
}

fn datasets(config: &ExperimentConfig) -> Result<Vec<(String, Dataset)>> {
    match config.instance()? {
        InstanceConfig::Hard { k, n, seeds } => seeds
            .iter()
            .map(|&seed| {
                let ds = generate_hard_instance(&HardInstanceSpec { k: *k, n: *n, seed })?;
                Ok((format!("seed{seed}"), ds))
            })
            .collect(),
        InstanceConfig::DatasetFile { path } => {
            let stem = path
                .file_stem()
                .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
            Ok(vec![(stem, read_dataset(path)?)])
        }
    }
}

/// Runs the configured protocol on each dataset, writing `trace_<tag>.csv`,
/// `report_<tag>.json` and optionally `logits_<tag>.bin`. Bound violations are
/// recorded in the report, not raised.
pub fn cmd_run(config: &ExperimentConfig) -> Result<Vec<RunReport>> {
    config.validate()?;
    let mut reports = Vec::new();
    for (tag, ds) in datasets(config)? {
        let graph = config.build_graph(ds.d())?;
        let (report, trace) = run_single(config, &ds, &graph, &tag)?;
        let dir = &config.output_dir;
        write_atomic(&dir.join(format!("trace_{tag}.csv")), |w| trace.write_csv(w))?;
        write_json(&dir.join(format!("report_{tag}.json")), &report)?;
        if config.dump_logits {
            write_atomic(&dir.join(format!("logits_{tag}.bin")), |w| trace.write_logits(w))?;
        }
        reports.push(report);
    }
    Ok(reports)
}
