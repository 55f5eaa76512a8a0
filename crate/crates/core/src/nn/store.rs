use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// He-normal with the given fan-in and gain.
    Kaiming { fan_in: usize, gain: f64 },
    Normal { std: f64 },
}

/// Named trainable parameters and non-trainable buffers of one network.
///
/// Initialization draws from a seeded generator owned by the store so that
/// two stores built from the same seed hold bit-identical parameters.
pub struct ParamStore {
    device: Device,
    trainable: RefCell<BTreeMap<String, Var>>,
    buffers: RefCell<BTreeMap<String, Var>>,
    rng: RefCell<ChaCha8Rng>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            device: Device::Cpu,
            trainable: RefCell::default(),
            buffers: RefCell::default(),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        self.trainable
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.trainable
            .borrow()
            .values()
            .map(|v| v.as_tensor().elem_count())
            .sum()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        if let Some(v) = self.trainable.borrow().get(name) {
            return Some(v.clone());
        }
        self.buffers.borrow().get(name).cloned()
    }

    /// Every parameter and buffer, keyed by name.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, v) in self.trainable.borrow().iter() {
            out.insert(k.clone(), v.as_detached_tensor());
        }
        for (k, v) in self.buffers.borrow().iter() {
            out.insert(k.clone(), v.as_detached_tensor());
        }
        out
    }

    /// Overwrites every parameter and buffer from `src`; all names must be present.
    pub fn load(&self, src: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        let t = self.trainable.borrow();
        let b = self.buffers.borrow();
        for (name, var) in t.iter().chain(b.iter()) {
            let key = format!("{prefix}{name}");
            let value = src
                .get(&key)
                .ok_or_else(|| Error::VersionMismatch(format!("missing tensor {key}")))?;
            if value.dims() != var.dims() {
                return Err(Error::shape(var.dims(), value.dims()));
            }
            var.set(&value.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }

    /// Copies values from another store with identical structure.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        let src: HashMap<String, Tensor> = other.tensors().into_iter().collect();
        self.load(&src, "")
    }

    fn init_tensor(&self, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let t = match init {
            Init::Zeros => Tensor::zeros(shape, DType::F32, &self.device)?,
            Init::Ones => Tensor::ones(shape, DType::F32, &self.device)?,
            Init::Kaiming { fan_in, gain } => {
                let std = gain / (fan_in.max(1) as f64).sqrt();
                self.normal(shape, n, std)?
            }
            Init::Normal { std } => self.normal(shape, n, std)?,
        };
        Ok(t)
    }

    fn normal(&self, shape: &[usize], n: usize, std: f64) -> Result<Tensor> {
        let dist = Normal::new(0.0f32, std as f32).map_err(|e| Error::BadConfig(e.to_string()))?;
        let mut rng = self.rng.borrow_mut();
        let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut *rng)).collect();
        Ok(Tensor::from_vec(data, shape, &self.device)?)
    }
}

/// Hierarchical name prefix into a [`ParamStore`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn sub(&self, name: impl std::fmt::Display) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    fn key(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let key = self.key(name);
        if self.store.trainable.borrow().contains_key(&key) {
            return Err(Error::BadConfig(format!("duplicate parameter {key}")));
        }
        let var = Var::from_tensor(&self.store.init_tensor(shape, init)?)?;
        self.store.trainable.borrow_mut().insert(key, var.clone());
        Ok(var)
    }

    pub fn buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let key = self.key(name);
        let var = Var::from_tensor(&self.store.init_tensor(shape, init)?)?;
        self.store.buffers.borrow_mut().insert(key, var.clone());
        Ok(var)
    }
}
