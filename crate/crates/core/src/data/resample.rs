use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::bands::{BandStack, BAND_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMethod {
    Nearest,
    #[default]
    Bilinear,
}

/// Source coordinate of a destination pixel centre (half-pixel convention).
fn source_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

/// Resamples one grid to `size x size`.
pub fn resample_grid(src: &Array2<f32>, size: usize, method: ResampleMethod) -> Array2<f32> {
    let (h, w) = src.dim();
    let sy = h as f64 / size as f64;
    let sx = w as f64 / size as f64;
    match method {
        ResampleMethod::Nearest => Array2::from_shape_fn((size, size), |(i, j)| {
            let y = (((i as f64 + 0.5) * sy).floor() as usize).min(h - 1);
            let x = (((j as f64 + 0.5) * sx).floor() as usize).min(w - 1);
            src[(y, x)]
        }),
        ResampleMethod::Bilinear => Array2::from_shape_fn((size, size), |(i, j)| {
            let y = source_coord(i, sy).clamp(0.0, (h - 1) as f64);
            let x = source_coord(j, sx).clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
            let top = src[(y0, x0)] * (1.0 - fx) + src[(y0, x1)] * fx;
            let bottom = src[(y1, x0)] * (1.0 - fx) + src[(y1, x1)] * fx;
            top * (1.0 - fy) + bottom * fy
        }),
    }
}

/// Stacks every band onto a common `size x size` grid in channel order.
/// Values stay in digital numbers.
pub fn resample_to_grid(stack: &BandStack, size: usize, method: ResampleMethod) -> Array3<f32> {
    let mut out = Array3::zeros((BAND_NAMES.len(), size, size));
    for (c, name) in BAND_NAMES.iter().enumerate() {
        let src = stack.bands[*name].mapv(f32::from);
        out.index_axis_mut(ndarray::Axis(0), c)
            .assign(&resample_grid(&src, size, method));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_is_preserved() {
        let src = Array2::from_elem((60, 60), 500.0f32);
        for m in [ResampleMethod::Nearest, ResampleMethod::Bilinear] {
            let out = resample_grid(&src, 120, m);
            assert!(out.iter().all(|v| *v == 500.0));
        }
    }

    #[test]
    fn nearest_integer_factor_replicates_blocks() {
        let src = Array2::from_shape_fn((20, 20), |(i, j)| (i * 20 + j) as f32);
        let out = resample_grid(&src, 120, ResampleMethod::Nearest);
        for i in 0..120 {
            for j in 0..120 {
                assert_eq!(out[(i, j)], src[(i / 6, j / 6)]);
            }
        }
    }

    /// Reference: separable interpolation matrices applied as `R A R^T`.
    fn interp_matrix(n_in: usize, n_out: usize) -> Array2<f64> {
        let mut r = Array2::zeros((n_out, n_in));
        for o in 0..n_out {
            let pos = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
                .max(0.0)
                .min((n_in - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            let t = pos - lo as f64;
            r[(o, lo)] += 1.0 - t;
            r[(o, hi)] += t;
        }
        r
    }

    #[test]
    fn bilinear_checkerboard_matches_reference() {
        let src = Array2::from_shape_fn((4, 4), |(i, j)| ((i + j) % 2) as f32 * 1000.0);
        let out = resample_grid(&src, 8, ResampleMethod::Bilinear);
        let r = interp_matrix(4, 8);
        let reference = r.dot(&src.mapv(f64::from)).dot(&r.t());
        for (a, b) in out.iter().zip(reference.iter()) {
            assert!((*a as f64 - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn range_is_preserved(vals in proptest::collection::vec(0.0f32..10000.0, 36), size in 6usize..40) {
            let src = Array2::from_shape_vec((6, 6), vals).unwrap();
            let lo = src.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            for m in [ResampleMethod::Nearest, ResampleMethod::Bilinear] {
                let out = resample_grid(&src, size, m);
                for v in out.iter() {
                    prop_assert!(*v >= lo - 1e-6 * hi.abs().max(1.0) && *v <= hi + 1e-6 * hi.abs().max(1.0));
                }
            }
        }
    }
}
