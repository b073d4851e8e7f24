use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, InstanceConfig};
use super::io::write_atomic;
use super::run::comparator_options;
use crate::error::{Error, Result};
use crate::graph::cyclic_path_assignment;
use crate::instance::{generate_hard_instance, HardInstanceSpec};
use crate::metrics::convergence_bound_rhs;
use crate::protocol::{fit_global, run_protocol};
use crate::solver::FitOptions;

/// One `(D, M, seed)` point of a depth scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub config_hash: String,
    pub k: usize,
    pub depth: usize,
    pub m: usize,
    /// Completed passes, `floor(D / k)`.
    pub p: usize,
    pub seed: u64,
    pub n: usize,
    pub sink_loss: Option<f64>,
    pub global_loss: Option<f64>,
    pub excess: Option<f64>,
    /// `B_{p*} B_X M / sqrt(D)`, empty when the path is not M-covered.
    pub upper_bound: Option<f64>,
    /// `1 / (p + 1)`, empty before the first full pass.
    pub lower_shape: Option<f64>,
    pub converged: Option<bool>,
    pub errors: String,
}

/// Seed-averaged scan point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub k: usize,
    pub depth: usize,
    pub m: usize,
    pub p: usize,
    pub seeds: usize,
    pub mean_excess: f64,
    /// Standard error of the seed mean (0 with a single seed).
    pub std_error: f64,
    pub mean_upper_bound: Option<f64>,
    pub lower_shape: Option<f64>,
}

fn depth_grid(k: usize, depths: &[usize], passes: &[usize]) -> Vec<usize> {
    let mut all: Vec<usize> = depths.iter().copied().chain(passes.iter().map(|p| p * k)).collect();
    all.sort_unstable();
    all.dedup();
    all
}

/// Scans one seed. Cyclic paths of different depths share their prefixes, so
/// the deepest path is run once and the sink of depth `D` is its agent `D`.
pub fn scan_seed(
    k: usize,
    n: usize,
    seed: u64,
    depths: &[usize],
    windows: &[usize],
    solver: &FitOptions,
    config_hash: &str,
) -> Vec<ScanRow> {
    let windows: Vec<usize> = if windows.is_empty() { vec![k] } else { windows.to_vec() };
    let blank = |depth: usize, m: usize| ScanRow {
        config_hash: config_hash.to_string(),
        k,
        depth,
        m,
        p: depth / k,
        seed,
        n,
        sink_loss: None,
        global_loss: None,
        excess: None,
        upper_bound: None,
        lower_shape: (depth >= k).then(|| 1.0 / ((depth / k) as f64 + 1.0)),
        converged: None,
        errors: String::new(),
    };

    let outcome = (|| -> Result<Vec<ScanRow>> {
        let max_depth = *depths.iter().max().ok_or_else(|| Error::InvalidConfig("empty depth grid".into()))?;
        let ds = generate_hard_instance(&HardInstanceSpec { k, n, seed })?;
        let graph = cyclic_path_assignment(k, max_depth)?;
        let trace = run_protocol(&ds, &graph, solver)?;
        let global = fit_global(&ds, &comparator_options(solver))?;
        let b_x = ds.second_moment_bound();
        let b_pstar = global.l1_norm();
        let mut rows = Vec::new();
        for &depth in depths {
            let model = trace.model(depth).expect("prefix agent fitted");
            let converged = global.converged && trace.models().take(depth).all(|m| m.converged);
            for &m in &windows {
                let mut row = blank(depth, m);
                row.sink_loss = Some(model.loss);
                row.global_loss = Some(global.loss);
                row.excess = Some(model.loss - global.loss);
                row.converged = Some(converged);
                if m <= depth && cyclic_path_assignment(k, depth)?.check_m_coverage(m, k)?.covered {
                    row.upper_bound = Some(convergence_bound_rhs(b_pstar, b_x, m, depth)?);
                }
                rows.push(row);
            }
        }
        Ok(rows)
    })();

    outcome.unwrap_or_else(|err| {
        depths
            .iter()
            .flat_map(|&depth| windows.iter().map(move |&m| (depth, m)))
            .map(|(depth, m)| ScanRow {
                errors: err.to_string(),
                ..blank(depth, m)
            })
            .collect()
    })
}

/// Seed means per `(D, M)`, skipping rows that failed.
pub fn aggregate_scan(rows: &[ScanRow]) -> Vec<ScanPoint> {
    let mut groups: BTreeMap<(usize, usize), Vec<&ScanRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.excess.is_some()) {
        groups.entry((row.depth, row.m)).or_default().push(row);
    }
    groups
        .into_values()
        .map(|g| {
            let count = g.len() as f64;
            let excess: Vec<f64> = g.iter().filter_map(|r| r.excess).collect();
            let mean = crate::sum::mean(excess.iter().copied());
            let std_error = if g.len() > 1 {
                let var = excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (count - 1.0);
                (var / count).sqrt()
            } else {
                0.0
            };
            let bounds: Vec<f64> = g.iter().filter_map(|r| r.upper_bound).collect();
            ScanPoint {
                k: g[0].k,
                depth: g[0].depth,
                m: g[0].m,
                p: g[0].p,
                seeds: g.len(),
                mean_excess: mean,
                std_error,
                mean_upper_bound: (bounds.len() == g.len()).then(|| bounds.iter().sum::<f64>() / count),
                lower_shape: g[0].lower_shape,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for row in rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    })
}

/// Runs the depth/pass scan for every seed and writes `scan.csv` (one row per
/// `(D, M, seed)`) and `scan_summary.csv` (seed means).
pub fn cmd_scan(config: &ExperimentConfig) -> Result<Vec<ScanRow>> {
    config.validate()?;
    let InstanceConfig::Hard { k, n, seeds } = config.instance()? else {
        return Err(Error::InvalidConfig("scan needs a `hard` instance".into()));
    };
    let depths = depth_grid(*k, &config.scan.depths, &config.scan.passes);
    if depths.is_empty() {
        return Err(Error::InvalidConfig("scan needs `depths` or `passes`".into()));
    }
    let hash = config.hash();
    let job = || -> Vec<ScanRow> {
        seeds
            .par_iter()
            .map(|&seed| scan_seed(*k, *n, seed, &depths, &config.scan.windows, &config.solver, &hash))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let rows = if config.replicates > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.replicates)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(job)
    } else {
        job()
    };
    write_csv(&config.output_dir.join("scan.csv"), &rows)?;
    write_csv(&config.output_dir.join("scan_summary.csv"), &aggregate_scan(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_merges_depths_and_passes() {
        assert_eq!(depth_grid(4, &[8, 3], &[1, 2]), vec![3, 4, 8]);
    }

    #[test]
    fn failed_seed_reports_errors() {
        let rows = scan_seed(1, 10, 0, &[4], &[], &FitOptions::default(), "h");
        assert_eq!(rows.len(), 1);
        assert!(rows[0].excess.is_none());
        assert!(!rows[0].errors.is_empty());
        assert!(aggregate_scan(&rows).is_empty());
    }
}
