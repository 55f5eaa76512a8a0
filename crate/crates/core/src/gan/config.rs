use serde::{Deserialize, Serialize};

use super::losses::AdversarialKind;
use super::nets::ArchConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub n_z: usize,
    pub lambda_img: f64,
    pub lambda_z: f64,
    pub adversarial: AdversarialKind,
    /// Spectral normalization of generator convolutions (discriminators
    /// are always normalized).
    pub sn_generators: bool,
    pub sn_encoders: bool,
    /// Learning rate of generators and encoders.
    pub lr_gen: f64,
    /// Learning rate of the four discriminators.
    pub lr_disc: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch (0-based) from which both learning rates decay linearly
    /// towards zero at `epochs`; constant when unset.
    pub lr_decay_start: Option<usize>,
    /// Decay of the running average of generator weights used for
    /// validation, grids and translation; live weights when unset.
    pub ema_decay: Option<f64>,
    /// Square random crop of training batches; full patches when unset.
    pub crop: Option<usize>,
    /// Cap on optimization steps per epoch.
    pub steps_per_epoch: Option<usize>,
    /// Cap on cloudy validation patches used for the FD.
    pub val_max: Option<usize>,
    pub grid_rows: usize,
    /// Display gain applied to reflectance before 8-bit quantization.
    pub grid_gain: f64,
    pub arch: ArchConfig,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            n_z: 16,
            lambda_img: 10.0,
            lambda_z: 0.1,
            adversarial: AdversarialKind::LeastSquares,
            sn_generators: false,
            sn_encoders: false,
            lr_gen: 2e-4,
            lr_disc: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            batch_size: 16,
            epochs: 100,
            lr_decay_start: None,
            ema_decay: None,
            crop: None,
            steps_per_epoch: None,
            val_max: None,
            grid_rows: 3,
            grid_gain: 2.5,
            arch: ArchConfig::default(),
        }
    }
}

impl GanConfig {
    /// Learning-rate multiplier during 0-based epoch `epoch`.
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        match self.lr_decay_start {
            Some(s) if epoch >= s => {
                let span = (self.epochs - s + 1) as f64;
                (self.epochs.saturating_sub(epoch) as f64 / span).max(0.0)
            }
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, r: &str| {
            Err(Error::ValidationError {
                key: format!("gan.{k}"),
                reason: r.into(),
            })
        };
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.n_z == 0 {
            return bad("n_z", "must be at least 1");
        }
        if !(self.lambda_img >= 0.0 && self.lambda_img.is_finite()) {
            return bad("lambda_img", "must be a finite nonnegative weight");
        }
        if !(self.lambda_z >= 0.0 && self.lambda_z.is_finite()) {
            return bad("lambda_z", "must be a finite nonnegative weight");
        }
        if !pos(self.lr_gen) {
            return bad("lr_gen", "must be positive");
        }
        if !pos(self.lr_disc) {
            return bad("lr_disc", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.lr_decay_start.is_some_and(|s| s >= self.epochs) {
            return bad("lr_decay_start", "must be below epochs");
        }
        if self.ema_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            return bad("ema_decay", "must lie in [0, 1)");
        }
        if let Some(c) = self.crop {
            if c < 8 || c % 8 != 0 {
                return bad("crop", "must be a multiple of 8, at least 8");
            }
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch", "must be at least 1");
        }
        if self.val_max.is_some_and(|v| v < 2) {
            return bad("val_max", "must be at least 2");
        }
        if self.grid_rows == 0 {
            return bad("grid_rows", "must be at least 1");
        }
        if !pos(self.grid_gain) {
            return bad("grid_gain", "must be positive");
        }
        let a = &self.arch;
        if a.gen_width == 0 || a.disc_width == 0 || a.enc_width == 0 || a.latent_disc_width == 0 {
            return bad("arch", "widths must be positive");
        }
        if a.disc_layers == 0 {
            return bad("arch.disc_layers", "must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let mut c = GanConfig {
            epochs: 10,
            ..Default::default()
        };
        assert_eq!(c.lr_factor(9), 1.0);
        c.lr_decay_start = Some(6);
        assert_eq!(c.lr_factor(5), 1.0);
        assert_eq!(c.lr_factor(6), 0.8);
        assert!((c.lr_factor(9) - 0.2).abs() < 1e-12);
        c.lr_decay_start = Some(10);
        assert!(c.validate().is_err());
    }
}
