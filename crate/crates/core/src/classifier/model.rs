use std::path::Path;

use candle_core::{Tensor, D};
use nalgebra::DMatrix;

use super::metrics::{predict_labels, Averaging, ThresholdRule};
use super::resnet::{ResNet18, ResNetConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{BandStats, LabelSet, Patch, STD_FLOOR};
use crate::error::{Error, Result};
use crate::nn::{softmax, tensor_from, to_host};

const EVAL_BATCH: usize = 64;

/// A trained (or explicitly untrained) classifier with the input
/// statistics and decision rule it was tuned with.
pub struct Classifier {
    pub net: ResNet18,
    /// Per-band reflectance statistics for input standardization.
    pub stats: BandStats,
    pub rule: ThresholdRule,
    pub averaging: Averaging,
    pub vocab_hash: String,
    pub trained: bool,
}

/// Stacks unit-reflectance patches into `[n, C, H, W]`.
pub fn patches_to_tensor(patches: &[&Patch]) -> Result<Tensor> {
    let first = patches
        .first()
        .ok_or_else(|| Error::shape("at least one patch", 0))?;
    let dim = first.pixels.dim();
    let mut flat = Vec::with_capacity(patches.len() * first.pixels.len());
    for p in patches {
        if p.pixels.dim() != dim {
            return Err(Error::shape(dim, p.pixels.dim()));
        }
        flat.extend(p.pixels.iter().copied());
    }
    tensor_from(flat, &[patches.len(), dim.0, dim.1, dim.2])
}

impl Classifier {
    pub fn untrained(config: ResNetConfig, seed: u64, stats: BandStats, vocab_hash: String) -> Result<Self> {
        if stats.mean.len() != config.in_channels {
            return Err(Error::shape(config.in_channels, stats.mean.len()));
        }
        Ok(Self {
            net: ResNet18::new(config, seed)?,
            stats,
            rule: ThresholdRule::default(),
            averaging: Averaging::Micro,
            vocab_hash,
            trained: false,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.net.config.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.net.config.feature_dim()
    }

    /// Per-band standardization of a unit-reflectance batch.
    pub fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.stats.mean.len();
        if x.rank() != 4 || x.dim(1)? != c {
            return Err(Error::shape(format!("[n, {c}, H, W]"), x.dims()));
        }
        let mean = tensor_from(self.stats.mean.clone(), &[1, c, 1, 1])?;
        let inv: Vec<f32> = self.stats.std.iter().map(|s| 1.0 / s.max(STD_FLOOR)).collect();
        let inv = tensor_from(inv, &[1, c, 1, 1])?;
        Ok(x.broadcast_sub(&mean)?.broadcast_mul(&inv)?)
    }

    /// Softmax outputs in evaluation mode.
    pub fn probabilities(&self, patches: &[Patch]) -> Result<Vec<Vec<f32>>> {
        let k = self.n_classes();
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(EVAL_BATCH) {
            let refs: Vec<&Patch> = chunk.iter().collect();
            let x = self.standardize(&patches_to_tensor(&refs)?)?;
            let (logits, _) = self.net.forward(&x, false)?;
            let p = to_host(&softmax(&logits)?)?;
            out.extend(p.chunks(k).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    pub fn predict(&self, patches: &[Patch]) -> Result<Vec<LabelSet>> {
        Ok(self
            .probabilities(patches)?
            .iter()
            .map(|p| predict_labels(p, self.rule))
            .collect())
    }

    /// Features of a unit-reflectance batch `[n, C, H, W]`, one sample at a
    /// time so a row never depends on the rest of the batch.
    pub fn features_of(&self, x: &Tensor) -> Result<DMatrix<f64>> {
        let n = x.dim(0)?;
        let d = self.feature_dim();
        let x = self.standardize(x)?;
        let mut rows = Vec::with_capacity(n * d);
        for i in 0..n {
            let f = self.net.features(&x.narrow(0, i, 1)?, false)?;
            rows.extend(to_host(&f)?.into_iter().map(f64::from));
        }
        Ok(DMatrix::from_row_slice(n, d, &rows))
    }

    pub fn save(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.insert_tensors("net.", self.net.store().tensors());
        ck.set_meta("kind", "classifier");
        ck.set_meta("resnet", serde_json::to_string(&self.net.config)?);
        ck.set_meta("stats", serde_json::to_string(&self.stats)?);
        ck.set_meta("rule", serde_json::to_string(&self.rule)?);
        ck.set_meta("averaging", serde_json::to_string(&self.averaging)?);
        ck.set_meta("vocab_hash", &self.vocab_hash);
        ck.set_meta("trained", self.trained);
        for (k, v) in extra {
            ck.set_meta(k, v);
        }
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        Self::from_checkpoint(&ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "classifier" {
            return Err(Error::VersionMismatch(format!(
                "expected a classifier checkpoint, found {}",
                ck.meta("kind")?
            )));
        }
        let config: ResNetConfig = ck.meta_json("resnet")?;
        let net = ResNet18::new(config, 0)?;
        net.store().load(&ck.tensor_map(), "net.")?;
        Ok(Self {
            net,
            stats: ck.meta_json("stats")?,
            rule: ck.meta_json("rule")?,
            averaging: ck.meta_json("averaging")?,
            vocab_hash: ck.meta("vocab_hash")?.to_string(),
            trained: ck.meta("trained")? == "true",
        })
    }
}

/// Global-average-pooled penultimate activations, `[n, feature_dim]`.
pub fn extract_features(params: &Classifier, batch: &[Patch]) -> Result<DMatrix<f64>> {
    let refs: Vec<&Patch> = batch.iter().collect();
    let x = patches_to_tensor(&refs)?;
    let (_, c, h, w) = x.dims4()?;
    let expect = params.net.config.in_channels;
    if c != expect || h == 0 || w == 0 {
        return Err(Error::shape(format!("[n, {expect}, H, W]"), x.dims()));
    }
    params.features_of(&x)
}

/// Row-wise argmax of a logits tensor.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<u32>> {
    Ok(logits.argmax(D::Minus1)?.to_vec1::<u32>()?)
}
