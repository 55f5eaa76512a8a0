use std::collections::BTreeMap;

use candle_core::Tensor;
use ndarray::s;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{alpha_grid, tau_grid, tune_threshold, Averaging, MetricsReport, ThresholdRule};
use super::model::{patches_to_tensor, Classifier};
use super::resnet::ResNetConfig;
use super::targets::{classification_loss, drop_labels, target_tensor};
use crate::data::{BandStats, DatasetManifest, Domain, LabelVocabulary, NormalizeMode, Patch, PatchStore, Split};
use crate::error::{Error, Result};
use crate::nn::{scalar, Optimizer, Sgd, SgdConfig};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    /// Cosine decay of the learning rate over `epochs`.
    pub cosine_schedule: bool,
    pub label_drop_p: f64,
    pub averaging: Averaging,
    /// Input scaling: per-band z-scores, or raw unit reflectance.
    pub normalize: NormalizeMode,
    /// Domains whose patches train and validate the classifier.
    pub train_domains: Vec<Domain>,
    /// Random horizontal and vertical flips of training inputs.
    pub augment_flips: bool,
    /// Patches used to estimate the per-band input statistics.
    pub stats_sample: usize,
    /// Optional cap on training patches per epoch (smoke runs).
    pub max_train_patches: Option<usize>,
    pub base_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let r = ResNetConfig::default();
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
            cosine_schedule: true,
            label_drop_p: 0.5,
            averaging: Averaging::Micro,
            normalize: NormalizeMode::Zscore,
            train_domains: vec![Domain::Clear],
            augment_flips: false,
            stats_sample: 2000,
            max_train_patches: None,
            base_width: r.base_width,
            stem_kernel: r.stem_kernel,
            stem_stride: r.stem_stride,
            stem_pool: r.stem_pool,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, r: &str| {
            Err(Error::ValidationError {
                key: format!("classifier.{k}"),
                reason: r.into(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.label_drop_p) {
            return bad("label_drop_p", "must lie in [0, 1]");
        }
        if self.train_domains.is_empty() {
            return bad("train_domains", "must name at least one domain");
        }
        if self.stats_sample == 0 {
            return bad("stats_sample", "must be at least 1");
        }
        Ok(())
    }

    pub fn resnet(&self, in_channels: usize, n_classes: usize) -> ResNetConfig {
        ResNetConfig {
            in_channels,
            n_classes,
            base_width: self.base_width,
            stem_kernel: self.stem_kernel,
            stem_stride: self.stem_stride,
            stem_pool: self.stem_pool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based epoch number.
    pub epoch: usize,
    pub loss: f64,
    pub metrics: MetricsReport,
    pub rule: ThresholdRule,
}

pub struct TrainedClassifier {
    /// Parameters of the best-F2 epoch.
    pub classifier: Classifier,
    pub history: Vec<EpochReport>,
    pub best_epoch: usize,
}

fn split_ids(manifest: &DatasetManifest, split: Split, domains: &[Domain]) -> Vec<String> {
    let mut ids: Vec<String> = domains
        .iter()
        .flat_map(|d| manifest.ids(split, *d))
        .collect();
    ids.sort();
    ids.dedup();
    ids
}

fn flip(p: &mut Patch, rng: &mut impl Rng) {
    if rng.random::<bool>() {
        p.pixels = p.pixels.slice(s![.., .., ..;-1]).to_owned();
    }
    if rng.random::<bool>() {
        p.pixels = p.pixels.slice(s![.., ..;-1, ..]).to_owned();
    }
}

fn snapshot(c: &Classifier) -> Result<BTreeMap<String, Tensor>> {
    c.net
        .store()
        .tensors()
        .into_iter()
        .map(|(k, t)| Ok((k, t.copy()?)))
        .collect()
}

/// Mean loss over one epoch of label-dropped, shuffled training batches.
fn train_epoch(
    model: &Classifier,
    opt: &mut Sgd,
    cfg: &ClassifierConfig,
    store: &PatchStore,
    ids: &[String],
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    let mut order = ids.to_vec();
    order.shuffle(&mut rng_for(seed, &format!("classifier/shuffle/{epoch}")));
    if let Some(cap) = cfg.max_train_patches {
        order.truncate(cap);
    }
    let mut drop_rng = rng_for(seed, &format!("classifier/drop/{epoch}"));
    let mut aug_rng = rng_for(seed, &format!("classifier/augment/{epoch}"));
    let k = model.n_classes();
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in order.chunks(cfg.batch_size) {
        let mut patches = store.read_many(chunk)?;
        let mut labels = Vec::with_capacity(patches.len());
        for p in patches.iter_mut() {
            labels.push(drop_labels(&p.labels, cfg.label_drop_p, &mut drop_rng)?);
            if cfg.augment_flips {
                flip(p, &mut aug_rng);
            }
        }
        let refs: Vec<&Patch> = patches.iter().collect();
        let x = model.standardize(&patches_to_tensor(&refs)?)?;
        let t = target_tensor(&labels, k)?;
        let (logits, _) = model.net.forward(&x, true)?;
        let loss = classification_loss(&logits, &t).map_err(|e| match e {
            Error::NonFiniteLogits => Error::DivergedTraining {
                epoch,
                loss: f64::NAN,
            },
            e => e,
        })?;
        let v = scalar(&loss)?;
        opt.step(&loss.backward()?)?;
        total += v * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Validation metrics with the decision rule tuned on the same predictions.
pub fn validate(
    model: &Classifier,
    patches: &[Patch],
    averaging: Averaging,
) -> Result<(ThresholdRule, MetricsReport)> {
    let probs = model.probabilities(patches)?;
    let truth: Vec<_> = patches.iter().map(|p| p.labels.clone()).collect();
    tune_threshold(&probs, &truth, &tau_grid(), &alpha_grid(), averaging)
}

/// Estimates per-band statistics from an evenly spaced subset of `ids`.
pub fn estimate_band_stats(store: &PatchStore, ids: &[String], sample: usize) -> Result<BandStats> {
    let step = ids.len().div_ceil(sample.max(1)).max(1);
    let picked: Vec<String> = ids.iter().step_by(step).cloned().collect();
    let patches = store.read_many(&picked)?;
    BandStats::from_tensors(patches.iter().map(|p| &p.pixels))
}

/// Trains the classifier; `on_epoch` sees every epoch's report and the
/// current parameters (for logging and checkpointing).
pub fn train_classifier(
    cfg: &ClassifierConfig,
    manifest: &DatasetManifest,
    store: &PatchStore,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochReport, &Classifier) -> Result<()>,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    let train_ids = split_ids(manifest, Split::Train, &cfg.train_domains);
    let val_ids = split_ids(manifest, Split::Val, &cfg.train_domains);
    if train_ids.is_empty() {
        return Err(Error::EmptyDomain("train"));
    }
    if val_ids.is_empty() {
        return Err(Error::EmptyDomain("val"));
    }
    let vocab = LabelVocabulary::new(manifest.label_vocabulary.clone())?;
    let (channels, _, _) = store.shape();
    let stats = match cfg.normalize {
        NormalizeMode::Zscore => estimate_band_stats(store, &train_ids, cfg.stats_sample)?,
        NormalizeMode::Unit => BandStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        },
    };
    let mut model = Classifier::untrained(
        cfg.resnet(channels, vocab.len()),
        derive_seed(seed, "classifier/init"),
        stats,
        vocab.hash(),
    )?;
    model.averaging = cfg.averaging;
    let val = store.read_many(&val_ids)?;

    let mut opt = Sgd::new(
        model.net.store().trainable_vars(),
        SgdConfig {
            lr: cfg.lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            nesterov: cfg.nesterov,
        },
    )?;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>, ThresholdRule)> = None;
    for epoch in 0..cfg.epochs {
        if cfg.cosine_schedule {
            let t = epoch as f64 / cfg.epochs as f64;
            opt.set_learning_rate(cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()));
        }
        let loss = train_epoch(&model, &mut opt, cfg, store, &train_ids, seed, epoch)?;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { epoch, loss });
        }
        let (rule, metrics) = validate(&model, &val, cfg.averaging)?;
        model.rule = rule;
        model.trained = true;
        let report = EpochReport {
            epoch: epoch + 1,
            loss,
            metrics,
            rule,
        };
        log::info!(
            "classifier epoch {} loss {:.4} P {:.3} R {:.3} F1 {:.3} F2 {:.3}",
            report.epoch,
            loss,
            metrics.precision,
            metrics.recall,
            metrics.f1,
            metrics.f2
        );
        on_epoch(&report, &model)?;
        history.push(report);
        if best.as_ref().is_none_or(|(f2, ..)| metrics.f2 > *f2) {
            best = Some((metrics.f2, epoch + 1, snapshot(&model)?, rule));
        }
    }
    let (_, best_epoch, params, rule) = best.expect("at least one epoch");
    let params = params.into_iter().collect();
    model.net.store().load(&params, "")?;
    model.rule = rule;
    Ok(TrainedClassifier {
        classifier: model,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_toy_dataset, ToyConfig};

    #[test]
    fn smoke_one_epoch() {
        let tmp = tempfile::tempdir().unwrap();
        let toy = make_toy_dataset(&ToyConfig {
            count: 40,
            size: 16,
            ..Default::default()
        })
        .unwrap();
        toy.write(tmp.path()).unwrap();
        let store = PatchStore::open(&tmp.path().join("patches.bin")).unwrap();
        let cfg = ClassifierConfig {
            epochs: 1,
            base_width: 4,
            stem_kernel: 3,
            stem_stride: 1,
            ..Default::default()
        };
        let mut seen = 0;
        let out = train_classifier(&cfg, &toy.manifest, &store, 1, |r, _| {
            assert!(r.loss.is_finite());
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 1);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_epoch, 1);
        assert!(out.classifier.trained);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = ClassifierConfig {
            label_drop_p: 1.5,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::ValidationError { .. })));
    }
}
