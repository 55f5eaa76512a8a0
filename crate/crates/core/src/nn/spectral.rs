use candle_core::{DType, Tensor};

use crate::error::{Error, Result};

/// Result of one power-iteration step.
#[derive(Debug, Clone)]
pub struct SpectralStep {
    /// `w / sigma`, differentiable with respect to `w`.
    pub weight: Tensor,
    /// Updated left singular vector estimate (detached).
    pub u: Tensor,
    /// Estimated top singular value, a scalar tensor in the graph of `w`.
    pub sigma: Tensor,
}

fn l2_norm(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.sqr()?.sum_all()?.sqrt()?.to_scalar::<f64>()?)
}

/// Spectral normalization of a 2-D weight `w` (`rows x rest`) with one power
/// iteration from the left estimate `u` (`rows`).
///
/// `v = normalize(w^T u)`, `u' = normalize(w v)`, `sigma = u'^T w v`.
/// Gradients flow through `sigma` with `u'` and `v` held constant.
pub fn spectral_normalize(w: &Tensor, u: &Tensor) -> Result<SpectralStep> {
    let (rows, _) = w.dims2()?;
    if u.dims() != [rows] {
        return Err(Error::shape([rows], u.dims()));
    }
    if l2_norm(u)? == 0.0 {
        return Err(Error::BadConfig("power iteration vector must be nonzero".into()));
    }
    let wd = w.detach();
    let wt_u = wd.t()?.matmul(&u.unsqueeze(1)?)?;
    let nv = l2_norm(&wt_u)?;
    if nv == 0.0 || !nv.is_finite() {
        return Err(Error::ZeroMatrix);
    }
    let v = wt_u.affine(1.0 / nv, 0.0)?;
    let wv = wd.matmul(&v)?;
    let nu = l2_norm(&wv)?;
    if nu == 0.0 || !nu.is_finite() {
        return Err(Error::ZeroMatrix);
    }
    let u_new = wv.affine(1.0 / nu, 0.0)?;
    let sigma = w.matmul(&v)?.mul(&u_new)?.sum_all()?;
    let weight = w.broadcast_div(&sigma)?;
    Ok(SpectralStep {
        weight,
        u: u_new.squeeze(1)?,
        sigma,
    })
}

/// Runs `iters` power-iteration steps and returns the final step.
pub fn power_iterate(w: &Tensor, u: &Tensor, iters: usize) -> Result<SpectralStep> {
    let mut step = spectral_normalize(w, u)?;
    for _ in 1..iters {
        step = spectral_normalize(w, &step.u)?;
    }
    Ok(step)
}
