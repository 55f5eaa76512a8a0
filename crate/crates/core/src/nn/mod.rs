//! Minimal neural-network building blocks on top of candle tensors:
//! seeded parameter stores, layers, spectral normalization and optimizers.

mod layers;
mod optim;
mod spectral;
mod store;

pub use layers::{
    instance_norm, leaky_relu, log_softmax, sigmoid, softmax, BatchNorm2d, Conv2d, ConvSpec,
    ConvTranspose2d, Linear,
};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd, SgdConfig};
pub use spectral::{power_iterate, spectral_normalize, SpectralStep};
pub use store::{Init, ParamStore, Scope};

use candle_core::{Device, Tensor};

use crate::error::Result;

/// Builds an `f32` tensor from host data.
pub fn tensor_from(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
}

/// Flattens a tensor into host `f32` values.
pub fn to_host(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
