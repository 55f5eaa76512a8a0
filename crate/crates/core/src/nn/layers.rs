use candle_core::{Tensor, Var, D};

use super::spectral::spectral_normalize;
use super::store::{Init, Scope};
use crate::error::{Error, Result};

/// Power-iteration state attached to a spectrally normalized layer.
#[derive(Clone)]
pub struct SpectralNorm {
    u: Var,
}

impl SpectralNorm {
    fn new(scope: &Scope, rows: usize) -> Result<Self> {
        let u = scope.buffer("sn_u", &[rows], Init::Normal { std: 1.0 })?;
        Ok(Self { u })
    }

    /// Normalizes a weight reshaped to `rows x rest`. Training mode advances
    /// the stored estimate; evaluation mode leaves it untouched.
    fn apply(&self, w: &Tensor, train: bool) -> Result<Tensor> {
        let shape = w.dims().to_vec();
        let flat = w.flatten_from(1)?;
        match spectral_normalize(&flat, self.u.as_tensor()) {
            Ok(step) => {
                if train {
                    self.u.set(&step.u.to_dtype(self.u.dtype())?)?;
                }
                Ok(step.weight.reshape(shape)?)
            }
            // an all-zero kernel has nothing to normalize
            Err(Error::ZeroMatrix) => Ok(w.clone()),
            Err(e) => Err(e),
        }
    }
}

#[derive(Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    stride: usize,
    padding: usize,
    sn: Option<SpectralNorm>,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
    pub spectral: bool,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            padding: kernel / 2,
            bias: true,
            spectral: false,
        }
    }
    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }
    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }
    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
    pub fn spectral(mut self, on: bool) -> Self {
        self.spectral = on;
        self
    }
}

impl Conv2d {
    pub fn new(scope: &Scope, spec: ConvSpec, gain: f64) -> Result<Self> {
        let fan_in = spec.in_ch * spec.kernel * spec.kernel;
        let weight = scope.param(
            "weight",
            &[spec.out_ch, spec.in_ch, spec.kernel, spec.kernel],
            Init::Kaiming { fan_in, gain },
        )?;
        let bias = if spec.bias {
            Some(scope.param("bias", &[spec.out_ch], Init::Zeros)?)
        } else {
            None
        };
        let sn = if spec.spectral {
            Some(SpectralNorm::new(scope, spec.out_ch)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
            sn,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let w = match &self.sn {
            Some(sn) => sn.apply(self.weight.as_tensor(), train)?,
            None => self.weight.as_tensor().clone(),
        };
        let y = x.conv2d(&w, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }

    /// Zeroes weight and bias (used to make residual branches start as identity).
    pub fn zero(&self) -> Result<()> {
        self.weight.set(&self.weight.zeros_like()?)?;
        if let Some(b) = &self.bias {
            b.set(&b.zeros_like()?)?;
        }
        Ok(())
    }
}

/// Transposed convolution, `kernel = 2 * stride` upsampling by `stride`.
#[derive(Clone)]
pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Var,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(scope: &Scope, in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        let kernel = 2 * stride;
        let weight = scope.param(
            "weight",
            &[in_ch, out_ch, kernel, kernel],
            Init::Kaiming {
                fan_in: in_ch * kernel * kernel / (stride * stride),
                gain: 2f64.sqrt(),
            },
        )?;
        let bias = scope.param("bias", &[out_ch], Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: stride / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

#[derive(Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
    sn: Option<SpectralNorm>,
}

impl Linear {
    pub fn new(scope: &Scope, in_dim: usize, out_dim: usize, gain: f64, spectral: bool) -> Result<Self> {
        let weight = scope.param(
            "weight",
            &[out_dim, in_dim],
            Init::Kaiming {
                fan_in: in_dim,
                gain,
            },
        )?;
        let bias = scope.param("bias", &[out_dim], Init::Zeros)?;
        let sn = if spectral {
            Some(SpectralNorm::new(scope, out_dim)?)
        } else {
            None
        };
        Ok(Self { weight, bias, sn })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let w = match &self.sn {
            Some(sn) => sn.apply(self.weight.as_tensor(), train)?,
            None => self.weight.as_tensor().clone(),
        };
        Ok(x.matmul(&w.t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Batch normalization over `(N, H, W)` with running statistics used in
/// evaluation mode.
#[derive(Clone)]
pub struct BatchNorm2d {
    pub gamma: Var,
    pub beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(scope: &Scope, ch: usize) -> Result<Self> {
        Ok(Self {
            gamma: scope.param("gamma", &[ch], Init::Ones)?,
            beta: scope.param("beta", &[ch], Init::Zeros)?,
            running_mean: scope.buffer("running_mean", &[ch], Init::Zeros)?,
            running_var: scope.buffer("running_var", &[ch], Init::Ones)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (mean, var) = if train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = self.momentum;
            let rm = (self.running_mean.as_detached_tensor() * (1.0 - m))?
                .add(&(mean.detach().flatten_all()? * m)?)?;
            let rv = (self.running_var.as_detached_tensor() * (1.0 - m))?
                .add(&(var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let inv = (var + self.eps)?.sqrt()?.recip()?;
        let xn = x.broadcast_sub(&mean)?.broadcast_mul(&inv)?;
        let g = self.gamma.as_tensor().reshape((1, c, 1, 1))?;
        let b = self.beta.as_tensor().reshape((1, c, 1, 1))?;
        Ok(xn.broadcast_mul(&g)?.broadcast_add(&b)?)
    }
}

/// Per-sample, per-channel normalization over the spatial dimensions.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

/// Numerically stable `log(softmax(x))` along the last dimension.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(x)?.exp()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn conv_shapes() {
        let s = ParamStore::new(0);
        let c = Conv2d::new(&s.root().sub("c"), ConvSpec::new(3, 8, 4).stride(2).padding(1), 1.0).unwrap();
        let x = Tensor::zeros((2, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(c.forward(&x, true).unwrap().dims(), &[2, 8, 8, 8]);
        let t = ConvTranspose2d::new(&s.root().sub("t"), 8, 3, 2).unwrap();
        let y = t.forward(&c.forward(&x, false).unwrap()).unwrap();
        assert_eq!(y.dims(), &[2, 3, 16, 16]);
    }

    #[test]
    fn spectral_conv_has_unit_norm_after_iterations() {
        let s = ParamStore::new(3);
        let spec = ConvSpec::new(4, 6, 3).spectral(true);
        let c = Conv2d::new(&s.root().sub("c"), spec, 1.0).unwrap();
        let x = Tensor::zeros((1, 4, 5, 5), DType::F32, &Device::Cpu).unwrap();
        for _ in 0..200 {
            c.forward(&x, true).unwrap();
        }
        let sn = c.sn.as_ref().unwrap();
        let w = sn.apply(c.weight.as_tensor(), false).unwrap();
        let flat = w.flatten_from(1).unwrap().to_dtype(DType::F64).unwrap();
        let rows = flat.to_vec2::<f64>().unwrap();
        let m = nalgebra::DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        let top = m.singular_values().max();
        assert!((top - 1.0).abs() < 1e-3, "top singular value {top}");
    }

    #[test]
    fn batchnorm_eval_is_batch_independent() {
        let s = ParamStore::new(0);
        let bn = BatchNorm2d::new(&s.root(), 2).unwrap();
        let dev = Device::Cpu;
        let x = Tensor::arange(0f32, 16., &dev).unwrap().reshape((2, 2, 2, 2)).unwrap();
        bn.forward(&x, true).unwrap();
        let both = bn.forward(&x, false).unwrap();
        let first = bn.forward(&x.narrow(0, 0, 1).unwrap(), false).unwrap();
        assert_eq!(
            both.narrow(0, 0, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            first.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn log_softmax_normalizes() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [100.0, 0.0, -100.0]], &Device::Cpu).unwrap();
        let p = softmax(&x).unwrap().sum(1).unwrap().to_vec1::<f64>().unwrap();
        for v in p {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
