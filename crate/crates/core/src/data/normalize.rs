use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Surface reflectance = DN / 10000.
pub const REFLECTANCE_SCALE: f32 = 10_000.0;
/// Lower bound applied to per-band standard deviations.
pub const STD_FLOOR: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// `clip(DN / 10000, 0, 1)`, used for the translation model.
    #[default]
    Unit,
    /// Per-band `(DN / 10000 - mean) / std`, used for the classifier.
    Zscore,
}

/// Per-band reflectance statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl BandStats {
    /// Mean / population std per channel over a set of reflectance tensors.
    pub fn from_tensors<'a>(tensors: impl IntoIterator<Item = &'a Array3<f32>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for t in tensors {
            if sum.is_empty() {
                sum = vec![0.0; t.dim().0];
                sq = vec![0.0; t.dim().0];
            }
            if t.dim().0 != sum.len() {
                return Err(Error::shape(sum.len(), t.dim().0));
            }
            for (c, band) in t.axis_iter(Axis(0)).enumerate() {
                for v in band.iter() {
                    sum[c] += *v as f64;
                    sq[c] += (*v as f64) * (*v as f64);
                }
            }
            count += t.dim().1 * t.dim().2;
        }
        if count == 0 {
            return Err(Error::TooFewSamples(0));
        }
        let n = count as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| ((q / n - (s / n).powi(2)).max(0.0)).sqrt() as f32)
            .collect();
        Ok(Self { mean, std })
    }
}

fn check_finite(t: &Array3<f32>) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput("reflectance tensor".into()))
    }
}

/// Applies per-band standardization to reflectance values.
pub fn standardize(reflectance: &Array3<f32>, stats: &BandStats) -> Result<Array3<f32>> {
    check_finite(reflectance)?;
    let c = reflectance.dim().0;
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::shape(c, stats.mean.len()));
    }
    let mut out = reflectance.clone();
    for (b, mut band) in out.axis_iter_mut(Axis(0)).enumerate() {
        let m = stats.mean[b];
        let s = stats.std[b].max(STD_FLOOR);
        band.mapv_inplace(|v| (v - m) / s);
    }
    Ok(out)
}

/// Converts digital numbers to model inputs.
pub fn normalize_reflectance(
    raw: &Array3<f32>,
    mode: NormalizeMode,
    stats: Option<&BandStats>,
) -> Result<Array3<f32>> {
    check_finite(raw)?;
    match mode {
        NormalizeMode::Unit => Ok(raw.mapv(|v| (v / REFLECTANCE_SCALE).clamp(0.0, 1.0))),
        NormalizeMode::Zscore => {
            let stats = stats.ok_or(Error::MissingStats)?;
            standardize(&raw.mapv(|v| v / REFLECTANCE_SCALE), stats)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_scale_and_clip() {
        let raw = Array3::from_shape_vec((1, 1, 3), vec![10000.0, 15000.0, 2500.0]).unwrap();
        let out = normalize_reflectance(&raw, NormalizeMode::Unit, None).unwrap();
        assert_eq!(out.iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.25]);
    }

    #[test]
    fn zscore_requires_stats() {
        let raw = Array3::zeros((2, 2, 2));
        assert!(matches!(
            normalize_reflectance(&raw, NormalizeMode::Zscore, None),
            Err(Error::MissingStats)
        ));
    }

    #[test]
    fn constant_dataset_zscore_is_zero() {
        let raw = Array3::from_elem((3, 4, 4), 1234.0f32);
        let refl = raw.mapv(|v| v / REFLECTANCE_SCALE);
        let stats = BandStats::from_tensors([&refl]).unwrap();
        assert!(stats.std.iter().all(|s| *s < 1e-6));
        let out = normalize_reflectance(&raw, NormalizeMode::Zscore, Some(&stats)).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_finite_rejected() {
        let mut raw = Array3::zeros((1, 2, 2));
        raw[(0, 1, 1)] = f32::NAN;
        assert!(matches!(
            normalize_reflectance(&raw, NormalizeMode::Unit, None),
            Err(Error::NonFiniteInput(_))
        ));
    }

    proptest! {
        #[test]
        fn unit_output_bounded_and_idempotent(vals in proptest::collection::vec(0.0f32..30000.0, 1..64)) {
            let n = vals.len();
            let raw = Array3::from_shape_vec((1, 1, n), vals).unwrap();
            let once = normalize_reflectance(&raw, NormalizeMode::Unit, None).unwrap();
            prop_assert!(once.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = once.mapv(|v| v * REFLECTANCE_SCALE);
            let twice = normalize_reflectance(&back, NormalizeMode::Unit, None).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
