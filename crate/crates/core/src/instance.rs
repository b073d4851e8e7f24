//! The cyclic hard instance and its lower-bound analytics.
//!
//! Latents `Z_1..Z_k` are i.i.d. standard normal, features are their first
//! differences (`x_1 = Z_1`, `x_i = Z_i - Z_{i-1}`) and the label is
//! `Bernoulli(sigmoid(Z_k))`. The optimal logit `Z_k = x_1 + ... + x_k` needs
//! every feature, while a path that sees one feature at a time can only
//! extend its usable feature set by one per pass.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::quadrature::{NormalExpectation, QuadOptions};
use crate::rng::Stream;
use crate::solver::{sigmoid, stable_softplus};
use crate::sum::NeumaierSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardInstanceSpec {
    pub k: usize,
    pub n: usize,
    pub seed: u64,
}

impl HardInstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidDimension(format!("k = {}, need k >= 2", self.k)));
        }
        if self.n == 0 {
            return Err(Error::InvalidDimension("n must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draws the hard instance. Per row the stream yields `Z_1..Z_k` and then the
/// label uniform, so a dataset is a pure function of `(k, n, seed)`.
pub fn generate_hard_instance(spec: &HardInstanceSpec) -> Result<Dataset> {
    spec.validate()?;
    let HardInstanceSpec { k, n, seed } = *spec;
    let mut stream = Stream::new(seed);
    let mut latents = DMatrix::<f64>::zeros(n, k);
    let mut features = DMatrix::<f64>::zeros(n, k);
    let mut labels = Vec::with_capacity(n);
    let mut row = vec![0.0; k];
    for i in 0..n {
        for z in row.iter_mut() {
            *z = stream.standard_normal();
        }
        labels.push(stream.bernoulli(sigmoid(row[k - 1])));
        for j in 0..k {
            latents[(i, j)] = row[j];
            features[(i, j)] = if j == 0 { row[0] } else { row[j] - row[j - 1] };
        }
    }
    let optimal = latents.column(k - 1).iter().copied().collect();
    Dataset::new(features, labels)?.with_latents(latents, optimal)
}

/// Largest `|sum_{j<=i} x_j - Z_i|` over rows and `i`, relative to the
/// magnitudes summed. `None` without latents.
pub fn prefix_sum_residual(dataset: &Dataset) -> Option<f64> {
    let latents = dataset.latents()?;
    let mut worst: f64 = 0.0;
    for r in 0..dataset.n() {
        let mut acc = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..dataset.d() {
            let x = dataset.features()[(r, i)];
            acc += x;
            scale = scale.max(x.abs()).max(acc.abs());
            let z = latents[(r, i)];
            worst = worst.max((acc - z).abs() / scale.max(f64::MIN_POSITIVE));
        }
    }
    Some(worst)
}

/// `{k - p + 1, ..., k}`: the features an end-of-pass-`p` logit can use.
pub fn relevance_set(k: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 || p > k {
        return Err(Error::InvalidDimension(format!("pass {p} outside 1..={k}")));
    }
    Ok((k - p + 1..=k).collect())
}

/// Variance-optimal linear predictor over the relevance set of pass `p`,
/// written as `z = c (Z_k + xi / sqrt(p))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassPredictor {
    pub p: usize,
    pub c: f64,
    /// Weights on `x_k, x_{k-1}, ..., x_{k-p+1}`.
    pub coefficients: Vec<f64>,
    /// Successive differences `c_j - c_{j-1}`, `j = 1..p-1`.
    pub alphas: Vec<f64>,
    pub alpha_sum: f64,
    /// `Var(z - c Z_k)`.
    pub eta_variance: f64,
    /// `p Var(eta) / c^2`.
    pub noise_variance_scaled: f64,
}

/// For fixed scale `c`, the coefficients over the last `p` features that
/// minimize the variance of `z - c Z_k`: all differences equal to `-c / p`,
/// so `c_j = c (p - j) / p` and the residual variance is `c^2 / p`.
pub fn optimal_pass_coefficients(p: usize, c: f64) -> Result<PassPredictor> {
    if p == 0 {
        return Err(Error::InvalidDimension("pass index must be >= 1".into()));
    }
    let pf = p as f64;
    let coefficients: Vec<f64> = (0..p).map(|j| c * (p - j) as f64 / pf).collect();
    let alphas: Vec<f64> = vec![-c / pf; p - 1];
    let alpha_sum = -c * (pf - 1.0) / pf;
    let eta_variance = c * c / pf;
    let noise_variance_scaled = if c == 0.0 { 1.0 } else { pf * eta_variance / (c * c) };
    Ok(PassPredictor {
        p,
        c,
        coefficients,
        alphas,
        alpha_sum,
        eta_variance,
        noise_variance_scaled,
    })
}

/// `h(u) = E[X sigmoid(X)]` for `X ~ N(0, u^2)`.
pub fn h_moment(u: f64, quad: &NormalExpectation) -> f64 {
    u * quad.expect(|x| x * sigmoid(u * x))
}

/// Derivative in `c` of `L(c (Z_k + xi))`, `xi ~ N(0, v)`:
/// `-E[Z sigmoid(Z)] + E[S sigmoid(c S)]` with `S ~ N(0, 1 + v)`.
pub fn scaling_gradient(c: f64, v: f64, quad: &NormalExpectation) -> f64 {
    let s = (1.0 + v).sqrt();
    -h_moment(1.0, quad) + s * quad.expect(|x| x * sigmoid(c * s * x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFactor {
    pub p: usize,
    pub c: f64,
    /// `g'(c)` at the returned root.
    pub gradient: f64,
}

/// Loss-minimizing scale `c*` for the pass-`p` predictor (noise variance
/// `1 / p`), by bisection on `g'` over `[0, 1]` down to a 1e-12 bracket.
pub fn optimal_scaling_factor(p: usize, quad: &NormalExpectation) -> Result<ScalingFactor> {
    if p == 0 {
        return Err(Error::InvalidDimension("pass index must be >= 1".into()));
    }
    let v = 1.0 / p as f64;
    let g = |c: f64| scaling_gradient(c, v, quad);
    let (mut lo, mut hi) = (0.0, 1.0);
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !(g_lo < 0.0 && g_hi > 0.0) {
        return Err(Error::QuadratureFailure(format!(
            "g'(0) = {g_lo:e}, g'(1) = {g_hi:e} do not bracket a root"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    Ok(ScalingFactor {
        p,
        c,
        gradient: g(c),
    })
}

/// Convenience wrapper building a fresh quadrature rule.
pub fn optimal_scaling_factor_with(p: usize, opts: QuadOptions) -> Result<ScalingFactor> {
    optimal_scaling_factor(p, &NormalExpectation::new(opts)?)
}

/// `E[-sigmoid(Z) Z + softplus(Z)]`, the loss of the optimal logit.
pub fn bayes_loss(quad: &NormalExpectation) -> f64 {
    quad.expect(|z| -sigmoid(z) * z + stable_softplus(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseComparison {
    pub loss_small: f64,
    pub loss_large: f64,
    /// `loss_large - loss_small`.
    pub margin: f64,
    /// Standard error of the paired per-sample difference.
    pub std_error: f64,
}

/// Monte Carlo estimate of `L(c Z + xi)` at two noise variances. The large
/// noise is the small one plus an independent increment, and both share the
/// same `Z`, so the difference has small variance.
pub fn noise_monotonicity_check(
    c: f64,
    v_small: f64,
    v_large: f64,
    n_mc: usize,
    seed: u64,
) -> Result<NoiseComparison> {
    if !(v_small >= 0.0 && v_large >= v_small) {
        return Err(Error::DomainError(format!(
            "need 0 <= v_small <= v_large, got {v_small}, {v_large}"
        )));
    }
    if n_mc < 2 {
        return Err(Error::InvalidDimension("need at least two Monte Carlo samples".into()));
    }
    let sd_small = v_small.sqrt();
    let sd_extra = (v_large - v_small).sqrt();
    let conditional = |z: f64, prob: f64| -prob * z + stable_softplus(z);
    let mut stream = Stream::new(seed);
    let (mut small, mut large, mut diff, mut diff_sq) = (
        NeumaierSum::new(),
        NeumaierSum::new(),
        NeumaierSum::new(),
        NeumaierSum::new(),
    );
    for _ in 0..n_mc {
        let z = stream.standard_normal();
        let e1 = stream.standard_normal();
        let e2 = stream.standard_normal();
        let prob = sigmoid(z);
        let base = c * z + sd_small * e1;
        let ls = conditional(base, prob);
        let ll = conditional(base + sd_extra * e2, prob);
        small.add(ls);
        large.add(ll);
        diff.add(ll - ls);
        diff_sq.add((ll - ls) * (ll - ls));
    }
    let nf = n_mc as f64;
    let mean_diff = diff.value() / nf;
    let var = ((diff_sq.value() / nf - mean_diff * mean_diff) * nf / (nf - 1.0)).max(0.0);
    let loss_small = small.value() / nf;
    let loss_large = large.value() / nf;
    Ok(NoiseComparison {
        loss_small,
        loss_large,
        margin: loss_large - loss_small,
        std_error: (var / nf).sqrt(),
    })
}

/// Unnormalized lower-bound shape `1 / (p + 1)` per pass.
pub fn predicted_excess_curve(passes: &[usize]) -> Result<Vec<f64>> {
    passes
        .iter()
        .map(|&p| {
            if p == 0 {
                Err(Error::InvalidDimension("pass index must be >= 1".into()))
            } else {
                Ok(1.0 / (p as f64 + 1.0))
            }
        })
        .collect()
}
