//! In-memory datasets: a feature matrix, binary labels, and optionally the
//! latent columns and optimal logits a generator knows about.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<u8>,
    latents: Option<DMatrix<f64>>,
    optimal_logits: Option<Vec<f64>>,
}

/// Column `j` (0-based) of a column-major matrix as a contiguous slice.
#[inline]
pub fn column(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: features.nrows(),
                right: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::InvalidDimension("dataset needs at least one row".into()));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::DomainError(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self {
            features,
            labels,
            latents: None,
            optimal_logits: None,
        })
    }

    pub fn with_latents(mut self, latents: DMatrix<f64>, optimal_logits: Vec<f64>) -> Result<Self> {
        if latents.nrows() != self.n() {
            return Err(Error::LengthMismatch {
                left: latents.nrows(),
                right: self.n(),
            });
        }
        if optimal_logits.len() != self.n() {
            return Err(Error::LengthMismatch {
                left: optimal_logits.len(),
                right: self.n(),
            });
        }
        self.latents = Some(latents);
        self.optimal_logits = Some(optimal_logits);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// Feature column `x_l`, 1-based.
    pub fn feature(&self, l: usize) -> &[f64] {
        assert!(l >= 1 && l <= self.d(), "feature index {l} out of 1..={}", self.d());
        column(&self.features, l - 1)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn latents(&self) -> Option<&DMatrix<f64>> {
        self.latents.as_ref()
    }

    /// Latent column `Z_i`, 1-based.
    pub fn latent(&self, i: usize) -> Option<&[f64]> {
        self.latents.as_ref().map(|z| column(z, i - 1))
    }

    pub fn optimal_logits(&self) -> Option<&[f64]> {
        self.optimal_logits.as_deref()
    }

    /// Design matrix made of the given 1-based feature columns, in order.
    pub fn select(&self, features: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.n();
        let mut data = Vec::with_capacity(n * features.len());
        for &l in features {
            if l == 0 || l > self.d() {
                return Err(Error::IndexOutOfRange {
                    what: "feature",
                    index: l,
                    max: self.d(),
                });
            }
            data.extend_from_slice(self.feature(l));
        }
        Ok(DMatrix::from_vec(n, features.len(), data))
    }

    /// `max_l sqrt(mean(x_l^2))`, the empirical second-moment bound.
    pub fn second_moment_bound(&self) -> f64 {
        (1..=self.d())
            .map(|l| crate::sum::mean(self.feature(l).iter().map(|x| x * x)).sqrt())
            .fold(0.0, f64::max)
    }
}
