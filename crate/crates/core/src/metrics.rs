//! KL machinery and bound calculators.
//!
//! For logistic predictors the expected Bernoulli KL is a Bregman divergence
//! of softplus: `KL(sigma(a) || sigma(b)) = softplus(b) - softplus(a) -
//! sigma(a) (b - a)`. The `_logits` variants work on logits directly and never
//! round probabilities to 0 or 1.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::{bce_loss, sigmoid, stable_softplus};
use crate::sum::{mean, NeumaierSum};

fn check_probability(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::DomainError(format!("{name} = {v} is not a probability")))
    }
}

fn xlogx_over(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        f64::INFINITY
    } else {
        a * (a / b).ln()
    }
}

/// `KL(Bernoulli(p) || Bernoulli(q))` with `0 log 0 = 0`. Infinite when `q`
/// sits at an endpoint that `p` does not.
pub fn bernoulli_kl(p: f64, q: f64) -> Result<f64> {
    check_probability("p", p)?;
    check_probability("q", q)?;
    Ok(xlogx_over(p, q) + xlogx_over(1.0 - p, 1.0 - q))
}

/// `KL(Bernoulli(sigmoid(a)) || Bernoulli(sigmoid(b)))`.
///
/// For nearby logits both log-ratios are evaluated as
/// `softplus(b) - softplus(a) = ln_1p(sigmoid(a) expm1(b - a))`, which keeps
/// full relative precision when `a` and `b` are large and close.
#[inline]
pub fn bernoulli_kl_logits(a: f64, b: f64) -> f64 {
    let delta = b - a;
    if delta.abs() > 30.0 {
        return stable_softplus(b) - stable_softplus(a) - sigmoid(a) * delta;
    }
    let (pa, qa) = (sigmoid(a), sigmoid(-a));
    pa * (qa * (-delta).exp_m1()).ln_1p() + qa * (pa * delta.exp_m1()).ln_1p()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::InvalidDimension("empty probability column".into()));
    }
    Ok(())
}

/// Mean pointwise Bernoulli KL between two probability columns.
pub fn expected_kl(p_col: &[f64], q_col: &[f64]) -> Result<f64> {
    check_lengths(p_col.len(), q_col.len())?;
    let mut acc = NeumaierSum::new();
    for (&p, &q) in p_col.iter().zip(q_col) {
        acc.add(bernoulli_kl(p, q)?);
    }
    Ok(acc.value() / p_col.len() as f64)
}

/// Mean pointwise Bernoulli KL between two logit columns.
pub fn expected_kl_logits(a_col: &[f64], b_col: &[f64]) -> Result<f64> {
    check_lengths(a_col.len(), b_col.len())?;
    Ok(mean(a_col.iter().zip(b_col).map(|(&a, &b)| bernoulli_kl_logits(a, b))))
}

/// `D(p || q) - 2 E[(p - q)^2]`; nonnegative up to rounding.
pub fn pinsker_gap(p_col: &[f64], q_col: &[f64]) -> Result<f64> {
    let kl = expected_kl(p_col, q_col)?;
    let mse = mean(p_col.iter().zip(q_col).map(|(p, q)| (p - q) * (p - q)));
    Ok(kl - 2.0 * mse)
}

/// Both sides of `L(q) = L(p*) + D(p* || q)` on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub loss_q: f64,
    pub loss_star: f64,
    pub kl: f64,
    /// `|L(q) - L(p*) - D(p* || q)|`
    pub residual: f64,
}

/// Evaluates the loss decomposition for a fitted `star_logits` and any
/// competitor `q_logits` built from the same feature set. The residual equals
/// `|g . (theta_q - theta*)|` where `g` is the gradient at the fit, so it
/// vanishes at exact stationarity and scales with the solver tolerance.
pub fn verify_decomposition(labels: &[u8], star_logits: &[f64], q_logits: &[f64]) -> Result<Decomposition> {
    check_lengths(star_logits.len(), q_logits.len())?;
    let loss_q = bce_loss(q_logits, labels)?;
    let loss_star = bce_loss(star_logits, labels)?;
    let kl = expected_kl_logits(star_logits, q_logits)?;
    Ok(Decomposition {
        loss_q,
        loss_star,
        kl,
        residual: (loss_q - loss_star - kl).abs(),
    })
}

/// `|mean((sigmoid(z_k) - y) z_g)|`, the quantity the path-coverage residual
/// bound controls.
pub fn residual_bound_lhs(block_end_logits: &[f64], labels: &[u8], comparator_logits: &[f64]) -> Result<f64> {
    check_lengths(block_end_logits.len(), labels.len())?;
    check_lengths(block_end_logits.len(), comparator_logits.len())?;
    Ok(mean(
        block_end_logits
            .iter()
            .zip(labels)
            .zip(comparator_logits)
            .map(|((&z, &y), &g)| (sigmoid(z) - f64::from(y)) * g),
    )
    .abs())
}

/// `B_g B_X sqrt(k epsilon / 2)`.
pub fn residual_bound_rhs(b_g: f64, b_x: f64, k: usize, epsilon: f64) -> f64 {
    b_g * b_x * (k as f64 * epsilon / 2.0).sqrt()
}

/// `B_{p*} B_X M / sqrt(D)`.
pub fn convergence_bound_rhs(b_pstar: f64, b_x: f64, m: usize, depth: usize) -> Result<f64> {
    if m == 0 || depth < m {
        return Err(Error::InvalidDimension(format!(
            "need depth >= M >= 1, got M = {m}, D = {depth}"
        )));
    }
    Ok(b_pstar * b_x * m as f64 / (depth as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StableBlock {
    /// 1-based block index.
    pub index: usize,
    /// Loss drop from the first to the last agent of the block.
    pub drop: f64,
    /// Number of disjoint blocks, `floor(D / M)`.
    pub blocks: usize,
}

impl StableBlock {
    /// 0-based positions of the first and last agent in the block.
    pub fn span(&self, m: usize) -> (usize, usize) {
        let start = (self.index - 1) * m;
        (start, start + m - 1)
    }
}

/// Splits a loss trace into `floor(D / M)` disjoint blocks of `M` agents and
/// returns the block whose internal loss drop is smallest (first on ties).
pub fn stable_block(losses: &[f64], m: usize) -> Result<StableBlock> {
    if m == 0 || losses.len() < m {
        return Err(Error::InvalidDimension(format!(
            "need 1 <= M <= {}, got M = {m}",
            losses.len()
        )));
    }
    let blocks = losses.len() / m;
    let mut best = StableBlock {
        index: 0,
        drop: f64::INFINITY,
        blocks,
    };
    for b in 0..blocks {
        let drop = losses[b * m] - losses[b * m + m - 1];
        if drop < best.drop {
            best.index = b + 1;
            best.drop = drop;
        }
    }
    Ok(best)
}

/// Measured constants and bound values for one protocol run on a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryReport {
    pub b_x: f64,
    pub b_g: f64,
    pub m: usize,
    pub depth: usize,
    pub epsilon: f64,
    pub rhs_residual_bound: f64,
    pub rhs_convergence_bound: f64,
}

impl TheoryReport {
    pub fn new(b_x: f64, b_g: f64, m: usize, depth: usize, epsilon: f64) -> Result<Self> {
        if !(b_x >= 0.0 && b_g >= 0.0) {
            return Err(Error::DomainError("bound constants must be nonnegative".into()));
        }
        // A stable block can show a tiny negative drop from solver slack.
        let epsilon = epsilon.max(0.0);
        Ok(Self {
            b_x,
            b_g,
            m,
            depth,
            epsilon,
            rhs_residual_bound: residual_bound_rhs(b_g, b_x, m, epsilon),
            rhs_convergence_bound: convergence_bound_rhs(b_g, b_x, m, depth)?,
        })
    }
}
