use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Common interface of the optimizers; state is exported as named tensors
/// so checkpoints can restore it exactly.
pub trait Optimizer {
    fn step(&mut self, grads: &GradStore) -> Result<()>;
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
    fn export_state(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) -> Result<()>;
    fn import_state(&mut self, prefix: &str, src: &HashMap<String, Tensor>) -> Result<()>;
}

fn fetch(src: &HashMap<String, Tensor>, key: &str) -> Result<Tensor> {
    src.get(key)
        .cloned()
        .ok_or_else(|| Error::VersionMismatch(format!("missing optimizer tensor {key}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. With `beta1 = 0` this is the momentum-free
/// (RMS-scaled) variant.
pub struct Adam {
    vars: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: usize,
    cfg: AdamConfig,
}

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, cfg: AdamConfig) -> Result<Self> {
        let m = vars
            .iter()
            .map(|(_, v)| v.zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            vars,
            m,
            v,
            t: 0,
            cfg,
        })
    }
}

impl Optimizer for Adam {
    fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let m = ((&self.m[i] * c.beta1)? + (g * (1.0 - c.beta1))?)?;
            let v = ((&self.v[i] * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let denom = ((&v / bc2)?.sqrt()? + c.eps)?;
            let update = ((&m / bc1)? / denom)?;
            var.set(&(var.as_detached_tensor() - (update * c.lr)?)?)?;
            self.m[i] = m.detach();
            self.v[i] = v.detach();
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.cfg.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    fn export_state(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) -> Result<()> {
        for (i, (name, _)) in self.vars.iter().enumerate() {
            out.insert(format!("{prefix}m.{name}"), self.m[i].clone());
            out.insert(format!("{prefix}v.{name}"), self.v[i].clone());
        }
        out.insert(
            format!("{prefix}step"),
            Tensor::new(&[self.t as u32], &candle_core::Device::Cpu)?,
        );
        Ok(())
    }

    fn import_state(&mut self, prefix: &str, src: &HashMap<String, Tensor>) -> Result<()> {
        for (i, (name, _)) in self.vars.iter().enumerate() {
            self.m[i] = fetch(src, &format!("{prefix}m.{name}"))?;
            self.v[i] = fetch(src, &format!("{prefix}v.{name}"))?;
        }
        self.t = fetch(src, &format!("{prefix}step"))?.to_vec1::<u32>()?[0] as usize;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

/// Stochastic gradient descent with (Nesterov) momentum and L2 decay.
pub struct Sgd {
    vars: Vec<(String, Var)>,
    buf: Vec<Tensor>,
    cfg: SgdConfig,
}

impl Sgd {
    pub fn new(vars: Vec<(String, Var)>, cfg: SgdConfig) -> Result<Self> {
        let buf = vars
            .iter()
            .map(|(_, v)| v.zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self { vars, buf, cfg })
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, grads: &GradStore) -> Result<()> {
        let c = self.cfg;
        for (i, (name, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // no decay on normalization parameters and biases
            let decay = c.weight_decay > 0.0 && var.rank() > 1 && !name.ends_with("bias");
            let g = if decay {
                (g + (var.as_detached_tensor() * c.weight_decay)?)?
            } else {
                g.clone()
            };
            let b = ((&self.buf[i] * c.momentum)? + &g)?;
            let d = if c.nesterov {
                (g + (&b * c.momentum)?)?
            } else {
                b.clone()
            };
            var.set(&(var.as_detached_tensor() - (d * c.lr)?)?)?;
            self.buf[i] = b.detach();
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.cfg.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    fn export_state(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) -> Result<()> {
        for (i, (name, _)) in self.vars.iter().enumerate() {
            out.insert(format!("{prefix}buf.{name}"), self.buf[i].clone());
        }
        Ok(())
    }

    fn import_state(&mut self, prefix: &str, src: &HashMap<String, Tensor>) -> Result<()> {
        for (i, (name, _)) in self.vars.iter().enumerate() {
            self.buf[i] = fetch(src, &format!("{prefix}buf.{name}"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn quadratic_descent(mut opt: impl Optimizer, x: &Var) -> f32 {
        for _ in 0..300 {
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            let g = loss.backward().unwrap();
            opt.step(&g).unwrap();
        }
        x.as_tensor().sqr().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn both_optimizers_minimize_a_quadratic() {
        let x = Var::new(&[3.0f32, -2.0], &Device::Cpu).unwrap();
        let adam = Adam::new(
            vec![("x".into(), x.clone())],
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(quadratic_descent(adam, &x) < 1e-2);

        let y = Var::new(&[3.0f32, -2.0], &Device::Cpu).unwrap();
        let sgd = Sgd::new(
            vec![("y".into(), y.clone())],
            SgdConfig {
                lr: 0.05,
                momentum: 0.9,
                weight_decay: 0.0,
                nesterov: true,
            },
        )
        .unwrap();
        assert!(quadratic_descent(sgd, &y) < 1e-6);
    }

    #[test]
    fn state_round_trip() {
        let x = Var::new(&[1.0f32, 2.0], &Device::Cpu).unwrap();
        let mut a = Adam::new(vec![("x".into(), x.clone())], AdamConfig::default()).unwrap();
        let g = x.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
        a.step(&g).unwrap();
        let mut out = BTreeMap::new();
        a.export_state("opt.", &mut out).unwrap();
        let mut b = Adam::new(vec![("x".into(), x.clone())], AdamConfig::default()).unwrap();
        b.import_state("opt.", &out.into_iter().collect()).unwrap();
        assert_eq!(b.t, 1);
        assert_eq!(
            b.v[0].to_vec1::<f32>().unwrap(),
            a.v[0].to_vec1::<f32>().unwrap()
        );
    }
}
