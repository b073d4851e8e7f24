//! Numerical checks of the structural claims behind the rate bounds. Each
//! suite reports its worst observed value against a fixed threshold.

use serde::Serialize;

use super::config::ExperimentConfig;
use super::io::write_json;
use crate::error::Result;
use crate::graph::cyclic_path_assignment;
use crate::instance::{
    generate_hard_instance, h_moment, noise_monotonicity_check, optimal_pass_coefficients,
    optimal_scaling_factor, HardInstanceSpec,
};
use crate::metrics::{pinsker_gap, verify_decomposition};
use crate::protocol::{agent_design, fit_global, run_protocol};
use crate::quadrature::NormalExpectation;
use crate::rng::Stream;
use crate::solver::{predict_logits, residual_moments, FitOptions};

pub const ORTHOGONALITY_TOL: f64 = 1e-9;
pub const DECOMPOSITION_TOL: f64 = 1e-8;
pub const PINSKER_FLOOR: f64 = -1e-12;
pub const MONOTONE_TOL: f64 = 1e-9;
pub const CLOSED_FORM_TOL: f64 = 1e-9;
pub const SCALING_GRADIENT_TOL: f64 = 1e-10;
pub const NOISE_MIN_STD_ERRORS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the suite's statistic.
    pub metric: f64,
    pub threshold: f64,
    /// `threshold - metric` for upper limits, `metric - threshold` for lower.
    pub margin: f64,
    pub detail: String,
}

impl SuiteResult {
    fn at_most(name: &'static str, metric: f64, threshold: f64, extra_ok: bool, detail: String) -> Self {
        Self {
            name,
            passed: extra_ok && metric <= threshold,
            metric,
            threshold,
            margin: threshold - metric,
            detail,
        }
    }

    fn at_least(name: &'static str, metric: f64, threshold: f64, extra_ok: bool, detail: String) -> Self {
        Self {
            name,
            passed: extra_ok && metric >= threshold,
            metric,
            threshold,
            margin: metric - threshold,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

/// Minimizes `Var(eta) = sum a_j^2 + (sum a_j + c)^2` over `a in R^{p-1}`
/// numerically: best common value on a coarse grid, then exact coordinate
/// descent. Returns `(alphas, variance)`.
pub fn minimize_eta_variance(p: usize, c: f64) -> (Vec<f64>, f64) {
    let variance = |a: &[f64]| {
        let s: f64 = a.iter().sum();
        a.iter().map(|x| x * x).sum::<f64>() + (s + c) * (s + c)
    };
    let dim = p.saturating_sub(1);
    if dim == 0 {
        return (Vec::new(), c * c);
    }
    let mut best = vec![0.0; dim];
    let mut best_var = variance(&best);
    for step in -20..=20 {
        let cand = vec![c * step as f64 / 20.0; dim];
        let v = variance(&cand);
        if v < best_var {
            best = cand;
            best_var = v;
        }
    }
    let mut alphas = best;
    for _ in 0..100_000 {
        let mut moved: f64 = 0.0;
        for j in 0..dim {
            let rest: f64 = alphas.iter().sum::<f64>() - alphas[j];
            let next = -(rest + c) / 2.0;
            moved = moved.max((next - alphas[j]).abs());
            alphas[j] = next;
        }
        if moved < 1e-16 {
            break;
        }
    }
    let var = variance(&alphas);
    (alphas, var)
}

fn theory_solver(config: &ExperimentConfig) -> FitOptions {
    FitOptions {
        ridge: 0.0,
        intercept: false,
        ..config.solver
    }
}

fn protocol_suites(config: &ExperimentConfig) -> Result<Vec<SuiteResult>> {
    let v = &config.verify;
    let opts = theory_solver(config);
    let ds = generate_hard_instance(&HardInstanceSpec {
        k: v.k,
        n: v.n,
        seed: v.seed,
    })?;
    let graph = cyclic_path_assignment(v.k, v.depth)?;
    let trace = run_protocol(&ds, &graph, &opts)?;

    let mut worst: f64 = 0.0;
    for &agent in graph.topo_order() {
        let design = agent_design(&ds, &graph, agent, &trace)?;
        let z = trace.logits(agent).expect("complete trace");
        for m in residual_moments(&design, z, ds.labels())? {
            worst = worst.max(m.abs());
        }
    }
    let unconverged = trace.models().filter(|m| !m.converged).count();
    let orthogonality = SuiteResult::at_most(
        "orthogonality",
        worst,
        ORTHOGONALITY_TOL,
        unconverged == 0,
        format!(
            "k={}, D={}, n={}: max |E[x (p - y)]| over all agents, {unconverged} unconverged fits",
            v.k, v.depth, v.n
        ),
    );

    let increase = trace.max_edge_increase(&graph).unwrap_or(0.0);
    let monotone = SuiteResult::at_most(
        "monotone_loss",
        increase,
        MONOTONE_TOL,
        true,
        format!("largest consecutive loss increase along the D={} path", v.depth),
    );

    let global = fit_global(&ds, &opts)?;
    let star = global.logits(ds.features())?;
    let mut stream = Stream::new(v.seed ^ 0x5eed_dec0);
    let mut worst_residual: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..v.perturbations {
        let theta: Vec<f64> = global
            .weights
            .iter()
            .map(|w| w + v.perturbation_scale * stream.standard_normal())
            .collect();
        let q = predict_logits(&theta, ds.features())?;
        let d = verify_decomposition(ds.labels(), &star, &q)?;
        worst_residual = worst_residual.max(d.residual);
        min_gap = min_gap.min(d.loss_q - d.loss_star);
    }
    let decomposition = SuiteResult::at_most(
        "decomposition",
        worst_residual,
        DECOMPOSITION_TOL,
        global.converged && min_gap > 0.0,
        format!(
            "{} perturbations (sd {}) of the global fit, grad_tol {:e}, grad_norm {:e}, min L(q) - L(p*) = {min_gap:e}",
            v.perturbations, v.perturbation_scale, opts.grad_tol, global.grad_norm
        ),
    );
    Ok(vec![orthogonality, decomposition, monotone])
}

fn pinsker_suite(config: &ExperimentConfig) -> Result<SuiteResult> {
    let v = &config.verify;
    let mut stream = Stream::new(v.seed ^ 0x9195_4e12);
    let mut min_gap = f64::INFINITY;
    for _ in 0..v.pinsker_pairs {
        let p = stream.uniform();
        let q = stream.uniform();
        min_gap = min_gap.min(pinsker_gap(&[p], &[q])?);
    }
    Ok(SuiteResult::at_least(
        "pinsker",
        min_gap,
        PINSKER_FLOOR,
        true,
        format!("min of KL - 2 (p - q)^2 over {} random pairs", v.pinsker_pairs),
    ))
}

fn closed_form_suite(config: &ExperimentConfig) -> Result<SuiteResult> {
    let v = &config.verify;
    let mut worst: f64 = 0.0;
    for &p in &v.closed_form_passes {
        for &c in &v.closed_form_scales {
            let closed = optimal_pass_coefficients(p, c)?;
            let (alphas, var) = minimize_eta_variance(p, c);
            let s: f64 = alphas.iter().sum();
            worst = worst
                .max((s - closed.alpha_sum).abs())
                .max((var - closed.eta_variance).abs())
                .max((closed.noise_variance_scaled - 1.0).abs());
            if c != 0.0 {
                worst = worst.max((p as f64 * var / (c * c) - 1.0).abs());
            }
        }
    }
    Ok(SuiteResult::at_most(
        "coefficient_closed_form",
        worst,
        CLOSED_FORM_TOL,
        true,
        format!(
            "numeric vs closed-form alpha sum, Var(eta) and V_p for p in {:?}, c in {:?}",
            v.closed_form_passes, v.closed_form_scales
        ),
    ))
}

fn scaling_suite(config: &ExperimentConfig) -> Result<SuiteResult> {
    let v = &config.verify;
    let quad = NormalExpectation::new(v.quadrature)?;
    let mut worst_gradient: f64 = 0.0;
    let mut ok = true;
    let mut prev = 0.0;
    let mut values = Vec::new();
    for &p in &v.scaling_passes {
        let s = optimal_scaling_factor(p, &quad)?;
        worst_gradient = worst_gradient.max(s.gradient.abs());
        ok &= s.c > 0.0 && s.c < 1.0 && s.c > prev;
        prev = s.c;
        values.push(format!("{p}:{:.6}", s.c));
    }
    let h: Vec<f64> = v.h_grid.iter().map(|&u| h_moment(u, &quad)).collect();
    let h_increasing = h.windows(2).all(|w| w[1] > w[0]);
    Ok(SuiteResult::at_most(
        "scaling_factor",
        worst_gradient,
        SCALING_GRADIENT_TOL,
        ok && h_increasing,
        format!(
            "c*(p) = [{}], in (0,1) and increasing: {ok}; h(u) increasing on {:?}: {h_increasing}",
            values.join(", "),
            v.h_grid
        ),
    ))
}

fn noise_suite(config: &ExperimentConfig) -> Result<SuiteResult> {
    let v = &config.verify;
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for (i, &(small, large)) in v.noise_pairs.iter().enumerate() {
        let r = noise_monotonicity_check(v.noise_scale, small, large, v.noise_samples, v.seed.wrapping_add(i as u64))?;
        let z = if r.std_error > 0.0 { r.margin / r.std_error } else { f64::INFINITY };
        worst = worst.min(z);
        parts.push(format!("({small},{large}): margin {:.3e} = {z:.1} se", r.margin));
    }
    Ok(SuiteResult::at_least(
        "noise_monotonicity",
        worst,
        NOISE_MIN_STD_ERRORS,
        true,
        format!("c = {}, n = {}; {}", v.noise_scale, v.noise_samples, parts.join("; ")),
    ))
}

/// Runs every suite and writes `verify.json`. The caller turns
/// `report.passed == false` into a nonzero exit code.
pub fn cmd_verify(config: &ExperimentConfig) -> Result<VerifyReport> {
    config.validate()?;
    let mut suites = protocol_suites(config)?;
    suites.push(pinsker_suite(config)?);
    suites.push(closed_form_suite(config)?);
    suites.push(scaling_suite(config)?);
    suites.push(noise_suite(config)?);
    let report = VerifyReport {
        config_hash: config.hash(),
        passed: suites.iter().all(|s| s.passed),
        suites,
    };
    write_json(&config.output_dir.join("verify.json"), &report)?;
    Ok(report)
}
