//! Gaussian expectations by Gauss-Hermite quadrature.

use std::num::NonZeroUsize;

use gauss_quad::GaussHermite;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadOptions {
    pub nodes: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { nodes: 200 }
    }
}

/// Nodes and weights for `E[f(X)]`, `X ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct NormalExpectation {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl NormalExpectation {
    pub fn new(opts: QuadOptions) -> Result<Self> {
        let deg = NonZeroUsize::new(opts.nodes)
            .ok_or_else(|| Error::QuadratureFailure("node count must be >= 1".into()))?;
        let rule = GaussHermite::new(deg);
        // Physicists' rule integrates against exp(-t^2); substitute x = sqrt(2) t.
        let norm = std::f64::consts::PI.sqrt();
        let (nodes, weights) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(t, w)| (std::f64::consts::SQRT_2 * t, w / norm))
            .unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(X)]` for standard normal `X`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        crate::sum::sum(self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)))
    }
}
