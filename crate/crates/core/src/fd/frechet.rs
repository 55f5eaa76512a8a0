use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::sqrtm::sqrtm_spd;
use super::stats::FeatureStats;
use crate::error::{Error, Result};

/// Diagonal jitter added to both covariances when the cross term fails.
pub const JITTER: f64 = 1e-6;
/// Negative results down to `-CLAMP_TOL * max(1, Tr S_a + Tr S_b)` are
/// treated as round-off and clamped to zero.
const CLAMP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrechetDistance {
    /// Squared Frechet distance.
    pub value: f64,
    pub jitter_applied: bool,
}

/// JSON record printed by `eval-fd` and stored next to every FD value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdRecord {
    pub fd: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub d: usize,
    pub jitter_applied: bool,
}

impl FdRecord {
    pub fn new(a: &FeatureStats, b: &FeatureStats, fd: FrechetDistance) -> Self {
        Self {
            fd: fd.value,
            n_a: a.n,
            n_b: b.n,
            d: a.dim(),
            jitter_applied: fd.jitter_applied,
        }
    }
}

fn trace_cross_term(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> Result<f64> {
    let ra = sqrtm_spd(sa)?;
    let inner = &ra * sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    Ok(sqrtm_spd(&inner)?.trace())
}

/// Squared Frechet distance between two Gaussian fits.
///
/// The cross term uses the symmetric form `Tr((S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<FrechetDistance> {
    frechet_distance_with_jitter(a, b, JITTER)
}

/// As [`frechet_distance`] with a caller-chosen fallback jitter.
pub fn frechet_distance_with_jitter(a: &FeatureStats, b: &FeatureStats, jitter: f64) -> Result<FrechetDistance> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let d = a.dim();
    let mean_term = (&a.mu - &b.mu).norm_squared();

    let (cross, sa, sb, jitter_applied) = match trace_cross_term(&a.sigma, &b.sigma) {
        Ok(c) => (c, a.sigma.clone(), b.sigma.clone(), false),
        Err(Error::IndefiniteMatrix(_)) | Err(Error::NotSymmetric(_)) => {
            log::warn!("Frechet cross term not PSD; retrying with {jitter:e} diagonal jitter");
            let eps = DMatrix::<f64>::identity(d, d) * jitter;
            let sa = &a.sigma + &eps;
            let sb = &b.sigma + &eps;
            (trace_cross_term(&sa, &sb)?, sa, sb, true)
        }
        Err(e) => return Err(e),
    };

    let traces = sa.trace() + sb.trace();
    let value = mean_term + traces - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::NumericalFailure(format!("non-finite distance {value}")));
    }
    let value = if value < 0.0 {
        if value >= -CLAMP_TOL * traces.max(1.0) {
            0.0
        } else {
            return Err(Error::NumericalFailure(format!(
                "distance {value:e} negative beyond round-off"
            )));
        }
    } else {
        value
    };
    Ok(FrechetDistance {
        value,
        jitter_applied,
    })
}
