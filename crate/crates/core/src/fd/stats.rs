use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rows are reduced in fixed-size chunks merged in order, so the result does
/// not depend on how callers batch their feature extraction.
pub const CHUNK_ROWS: usize = 256;

/// Mean and unbiased covariance of a feature population.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    /// Builds stats from explicit moments, symmetrizing `sigma`.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch(d, sigma.nrows()));
        }
        if n < 2 {
            return Err(Error::TooFewSamples(n));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        Ok(Self { mu, sigma, n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Streaming mean / scatter accumulator (pairwise merge of chunk moments).
#[derive(Debug, Clone)]
pub struct FeatureAccumulator {
    dim: usize,
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
    pending: Vec<f64>,
}

impl FeatureAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            n: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
            pending: Vec::with_capacity(CHUNK_ROWS * dim),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, row.len()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("feature row".into()));
        }
        self.pending.extend_from_slice(row);
        if self.pending.len() == CHUNK_ROWS * self.dim {
            self.flush();
        }
        Ok(())
    }

    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let rows = self.pending.len() / self.dim;
        let chunk = DMatrix::from_row_slice(rows, self.dim, &self.pending);
        self.pending.clear();

        let chunk_mean = chunk.row_mean().transpose();
        let mut centered = chunk;
        for mut r in centered.row_iter_mut() {
            r -= chunk_mean.transpose();
        }
        let chunk_scatter = centered.transpose() * &centered;

        let (na, nb) = (self.n as f64, rows as f64);
        let total = na + nb;
        let delta = &chunk_mean - &self.mean;
        self.scatter += chunk_scatter + (&delta * delta.transpose()) * (na * nb / total);
        self.mean += delta * (nb / total);
        self.n += rows;
    }

    pub fn finish(mut self) -> Result<FeatureStats> {
        self.flush();
        if self.n < 2 {
            return Err(Error::TooFewSamples(self.n));
        }
        let sigma = self.scatter / (self.n as f64 - 1.0);
        FeatureStats::new(self.mean, sigma, self.n)
    }
}

/// Fits a Gaussian to `features` (one sample per row).
pub fn fit_feature_stats(features: &DMatrix<f64>) -> Result<FeatureStats> {
    if features.nrows() < 2 {
        return Err(Error::TooFewSamples(features.nrows()));
    }
    let mut acc = FeatureAccumulator::new(features.ncols());
    let mut row = vec![0.0; features.ncols()];
    for r in features.row_iter() {
        row.iter_mut().zip(r.iter()).for_each(|(d, s)| *d = *s);
        acc.push_row(&row)?;
    }
    let stats = acc.finish()?;
    if stats.n < stats.dim() {
        log::warn!(
            "covariance is rank deficient: {} samples for {} feature dimensions",
            stats.n,
            stats.dim()
        );
    }
    Ok(stats)
}
