//! Logistic regression without intercept, fitted by damped Newton.
//!
//! The objective is the empirical binary cross-entropy
//! `mean(softplus(z_i) - y_i z_i)` with `z = X theta`, plus an optional
//! `ridge * |theta|^2 / 2`. Newton directions come from a Jacobi-scaled
//! pseudo-inverse of the Hessian, so zero or exactly collinear design columns
//! (an agent that sees the same feature twice) get a minimum-norm step instead
//! of a failed factorization.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::column;
use crate::error::{Error, Result};
use crate::sum::NeumaierSum;

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn stable_softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pointwise loss `softplus(z) - y z`.
#[inline]
pub fn pointwise_loss(z: f64, y: f64) -> f64 {
    stable_softplus(z) - y * z
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&y| y > 1) {
        Some(bad) => Err(Error::DomainError(format!("label {bad} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy of `logits` against 0/1 `labels`.
pub fn bce_loss(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: logits.len(),
            right: labels.len(),
        });
    }
    if logits.is_empty() {
        return Err(Error::InvalidDimension("empty logit vector".into()));
    }
    check_labels(labels)?;
    let mut acc = NeumaierSum::new();
    for (&z, &y) in logits.iter().zip(labels) {
        acc.add(pointwise_loss(z, f64::from(y)));
    }
    Ok(acc.value() / logits.len() as f64)
}

/// Row-wise inner products `X w`.
pub fn predict_logits(weights: &[f64], design: &DMatrix<f64>) -> Result<Vec<f64>> {
    if design.ncols() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: design.ncols(),
            got: weights.len(),
        });
    }
    let mut z = vec![0.0; design.nrows()];
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (zi, &x) in z.iter_mut().zip(column(design, j)) {
            *zi += w * x;
        }
    }
    Ok(z)
}

/// Per-column empirical means of `x_l * (sigmoid(z) - y)`. At an
/// unregularized stationary point these are the gradient components and vanish.
pub fn residual_moments(design: &DMatrix<f64>, logits: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    let n = design.nrows();
    if logits.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: logits.len(),
        });
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    check_labels(labels)?;
    let resid: Vec<f64> = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| sigmoid(z) - f64::from(y))
        .collect();
    Ok((0..design.ncols())
        .map(|j| {
            let mut acc = NeumaierSum::new();
            for (&x, &r) in column(design, j).iter().zip(&resid) {
                acc.add(x * r);
            }
            acc.value() / n as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Stop once the sup-norm of the gradient is at most this.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub ridge: f64,
    /// Step shrink factor for the backtracking line search.
    pub backtrack: f64,
    pub initial_step: f64,
    /// Give up (unconverged) once `|theta|_2` exceeds this; BCE on separable
    /// data has no finite minimizer.
    pub max_weight_norm: f64,
    /// Append an unpenalized constant column.
    pub intercept: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iters: 100,
            ridge: 0.0,
            backtrack: 0.5,
            initial_step: 1.0,
            max_weight_norm: 1e4,
            intercept: false,
        }
    }
}

impl FitOptions {
    pub fn with_grad_tol(mut self, grad_tol: f64) -> Self {
        self.grad_tol = grad_tol;
        self
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.grad_tol > 0.0) {
            return bad(format!("grad_tol must be > 0, got {}", self.grad_tol));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad(format!("backtrack must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.initial_step > 0.0) {
            return bad(format!("initial_step must be > 0, got {}", self.initial_step));
        }
        if !(self.max_weight_norm > 0.0) {
            return bad("max_weight_norm must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIters,
    /// Weights left the `max_weight_norm` ball (separable or nearly so).
    WeightNormCap,
    /// Hessian has no usable curvature along the gradient.
    SingularHessian,
    /// Line search could not decrease the objective.
    NoProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub weights: Vec<f64>,
    /// 0 unless the fit was run with `intercept = true`.
    pub intercept: f64,
    /// Empirical BCE at the solution (ridge term excluded).
    pub loss: f64,
    /// Sup-norm of the gradient of the fitted objective.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: FitStatus,
}

impl FitResult {
    pub fn logits(&self, design: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut z = predict_logits(&self.weights, design)?;
        if self.intercept != 0.0 {
            z.iter_mut().for_each(|v| *v += self.intercept);
        }
        Ok(z)
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum::<f64>() + self.intercept.abs()
    }
}

struct Problem<'a> {
    cols: Vec<&'a [f64]>,
    labels: Vec<f64>,
    ridge: f64,
    /// Index of the unpenalized constant column, if any.
    bias: Option<usize>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.labels.len()
    }

    fn m(&self) -> usize {
        self.cols.len() + usize::from(self.bias.is_some())
    }

    fn logits(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = match self.bias {
            Some(b) => vec![theta[b]; self.n()],
            None => vec![0.0; self.n()],
        };
        for (col, &w) in self.cols.iter().zip(theta) {
            if w == 0.0 {
                continue;
            }
            for (zi, &x) in z.iter_mut().zip(col.iter()) {
                *zi += w * x;
            }
        }
        z
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        if self.ridge == 0.0 {
            return 0.0;
        }
        let sq: f64 = theta[..self.cols.len()].iter().map(|w| w * w).sum();
        0.5 * self.ridge * sq
    }

    fn loss(&self, z: &[f64]) -> f64 {
        let mut acc = NeumaierSum::new();
        for (&zi, &y) in z.iter().zip(&self.labels) {
            acc.add(pointwise_loss(zi, y));
        }
        acc.value() / self.n() as f64
    }

    fn gradient(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        let n = self.n() as f64;
        let resid: Vec<f64> = z
            .iter()
            .zip(&self.labels)
            .map(|(&zi, &y)| sigmoid(zi) - y)
            .collect();
        let mut g: Vec<f64> = self
            .cols
            .iter()
            .zip(theta)
            .map(|(col, &w)| {
                let mut acc = NeumaierSum::new();
                for (&x, &r) in col.iter().zip(&resid) {
                    acc.add(x * r);
                }
                acc.value() / n + self.ridge * w
            })
            .collect();
        if self.bias.is_some() {
            let mut acc = NeumaierSum::new();
            resid.iter().for_each(|&r| acc.add(r));
            g.push(acc.value() / n);
        }
        g
    }

    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let m = self.m();
        let n = self.n();
        let curv: Vec<f64> = z
            .iter()
            .map(|&zi| {
                let s = sigmoid(zi);
                s * (1.0 - s)
            })
            .collect();
        let ones;
        let mut cols = self.cols.clone();
        if self.bias.is_some() {
            ones = vec![1.0; n];
            cols.push(&ones);
        }
        let mut h = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += cols[a][i] * cols[b][i] * curv[i];
                }
                let v = acc / n as f64;
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
            if Some(a) != self.bias {
                h[(a, a)] += self.ridge;
            }
        }
        h
    }
}

/// Minimum-norm solution of `H d = g` on the well-conditioned part of the
/// spectrum of the Jacobi-scaled Hessian.
fn newton_direction(h: &DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    const REL_CUTOFF: f64 = 1e-13;
    let m = g.len();
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let d = h[(j, j)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(m, m, |a, b| h[(a, b)] * scale[a] * scale[b]);
    let eig = SymmetricEigen::new(scaled);
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(max_eig > 0.0) {
        return None;
    }
    let gs = DVector::from_iterator(m, g.iter().zip(&scale).map(|(gi, s)| gi * s));
    let mut ds = DVector::zeros(m);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > REL_CUTOFF * max_eig {
            let v = eig.eigenvectors.column(k);
            ds += v * (v.dot(&gs) / lambda);
        }
    }
    Some(ds.iter().zip(&scale).map(|(d, s)| d * s).collect())
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

/// Fits `theta` minimizing the empirical BCE of `design * theta` (plus the
/// optional ridge term). Non-convergence is reported through
/// [`FitResult::converged`] and [`FitResult::status`], never as an error.
pub fn fit_logistic(design: &DMatrix<f64>, labels: &[u8], opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let n = design.nrows();
    if n == 0 {
        return Err(Error::InvalidDimension("design has no rows".into()));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if design.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("design"));
    }
    check_labels(labels)?;

    let width = design.ncols();
    let problem = Problem {
        cols: (0..width).map(|j| column(design, j)).collect(),
        labels: labels.iter().map(|&y| f64::from(y)).collect(),
        ridge: opts.ridge,
        bias: opts.intercept.then_some(width),
    };
    let m = problem.m();

    let mut theta = vec![0.0; m];
    let mut z = problem.logits(&theta);
    let mut loss = problem.loss(&z);
    let mut objective = loss + problem.penalty(&theta);
    let mut grad = problem.gradient(&theta, &z);
    let mut grad_norm = sup_norm(&grad);
    let mut iterations = 0;
    let mut status = FitStatus::MaxIters;

    while iterations < opts.max_iters {
        if grad_norm <= opts.grad_tol {
            status = FitStatus::Converged;
            break;
        }
        let h = problem.hessian(&z);
        let Some(dir) = newton_direction(&h, &grad) else {
            status = FitStatus::SingularHessian;
            break;
        };
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(slope > 0.0) {
            status = FitStatus::SingularHessian;
            break;
        }

        let mut step = opts.initial_step;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t - step * d).collect();
            let cz = problem.logits(&cand);
            let closs = problem.loss(&cz);
            let cobj = closs + problem.penalty(&cand);
            let armijo = cobj <= objective - 1e-4 * step * slope;
            // Near the optimum the decrease drops below rounding; accept a
            // step that keeps the objective flat and shrinks the gradient.
            let flat = cobj <= objective + 1e-15 * objective.abs().max(1.0);
            if armijo || flat {
                let cgrad = problem.gradient(&cand, &cz);
                let cnorm = sup_norm(&cgrad);
                if armijo || cnorm < grad_norm {
                    accepted = Some((cand, cz, closs, cobj, cgrad, cnorm));
                    break;
                }
            }
            step *= opts.backtrack;
        }
        let Some((cand, cz, closs, cobj, cgrad, cnorm)) = accepted else {
            status = FitStatus::NoProgress;
            break;
        };
        theta = cand;
        z = cz;
        loss = closs;
        objective = cobj;
        grad = cgrad;
        grad_norm = cnorm;
        iterations += 1;

        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > opts.max_weight_norm {
            status = FitStatus::WeightNormCap;
            break;
        }
    }
    if status == FitStatus::MaxIters && grad_norm <= opts.grad_tol {
        status = FitStatus::Converged;
    }

    let intercept = if opts.intercept { theta.pop().unwrap_or(0.0) } else { 0.0 };
    Ok(FitResult {
        weights: theta,
        intercept,
        loss,
        grad_norm,
        iterations,
        converged: status == FitStatus::Converged,
        status,
    })
}
