//! Seeded synthetic two-domain data for desk-scale experiments.
//!
//! Clear images are soft mixtures of class textures (a spectral signature
//! modulated by a class-specific spatial frequency), blended by smooth
//! random fields. Each cloudy counterpart adds an alpha-blended bright
//! ellipse and a displaced dark (shadow) ellipse. Ground-truth pairing and
//! masks are kept for evaluation only; training consumes the manifest,
//! which treats the two domains as unpaired.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::data::{
    DatasetManifest, Domain, LabelSet, LabelVocabulary, Patch, PatchStore, Split, Splits,
    StoreWriter, MANIFEST_VERSION,
};
use crate::fd::{fit_feature_stats, frechet_distance, FdRecord, FeatureStats};
use crate::gan::load_tensor;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const MIN_COVERAGE: f64 = 0.05;
pub const MAX_COVERAGE: f64 = 0.60;
const MAX_TRIES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub split_ratios: [f64; 3],
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            count: 2048,
            size: 32,
            channels: 4,
            n_classes: 8,
            split_ratios: [0.8, 0.1, 0.1],
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::BadConfig(format!("count {} < 2", self.count)));
        }
        if self.size < 8 {
            return Err(Error::BadConfig(format!("size {} < 8", self.size)));
        }
        if self.channels == 0 {
            return Err(Error::BadConfig("channels must be positive".into()));
        }
        if self.n_classes < 3 {
            return Err(Error::BadConfig(format!("n_classes {} < 3", self.n_classes)));
        }
        crate::data::validate_ratios(self.split_ratios)
    }
}

/// One scene in both domains plus its corruption masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPatchPair {
    pub clear: Array3<f32>,
    pub cloudy: Array3<f32>,
    pub labels: LabelSet,
    pub cloud_mask: Array2<bool>,
    pub shadow_mask: Array2<bool>,
}

impl ToyPatchPair {
    pub fn coverage(&self) -> f64 {
        let n = self.cloud_mask.len() as f64;
        self.cloud_mask
            .iter()
            .zip(self.shadow_mask.iter())
            .filter(|(c, s)| **c || **s)
            .count() as f64
            / n
    }
}

#[derive(Debug, Clone)]
struct ClassSignature {
    spectrum: Vec<f32>,
    freq: (f32, f32),
    phase: f32,
}

fn class_signatures(cfg: &ToyConfig) -> Vec<ClassSignature> {
    let mut rng = rng_for(cfg.seed, "toy/classes");
    (0..cfg.n_classes)
        .map(|k| {
            let spectrum = (0..cfg.channels).map(|_| rng.random_range(0.08..0.5)).collect();
            // distinct radial frequencies, random orientation
            let radius = 1.5 + 3.5 * k as f32 / (cfg.n_classes - 1) as f32;
            let theta: f32 = rng.random_range(0.0..PI);
            ClassSignature {
                spectrum,
                freq: (radius * theta.cos(), radius * theta.sin()),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect()
}

/// Smooth random field as a sum of low-frequency cosines.
fn smooth_field(rng: &mut ChaCha8Rng, size: usize) -> Array2<f32> {
    let waves: Vec<(f32, f32, f32, f32)> = (0..4)
        .map(|_| {
            let a: f32 = StandardNormal.sample(rng);
            (
                a,
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let s = size as f32;
    Array2::from_shape_fn((size, size), |(i, j)| {
        waves
            .iter()
            .map(|(a, fy, fx, ph)| a * (2.0 * PI * (fy * i as f32 + fx * j as f32) / s + ph).cos())
            .sum()
    })
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f32,
    cx: f32,
    a: f32,
    b: f32,
    angle: f32,
}

impl Ellipse {
    /// Normalized radius; inside when < 1.
    fn radius(&self, i: usize, j: usize) -> f32 {
        let (dy, dx) = (i as f32 + 0.5 - self.cy, j as f32 + 0.5 - self.cx);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

/// Opacity ramp: positive strictly inside the ellipse, saturating at `peak`.
fn ramp(r: f32, peak: f32) -> f32 {
    if r < 1.0 {
        peak * ((1.0 - r) / 0.35).min(1.0)
    } else {
        0.0
    }
}

fn make_clear(
    rng: &mut ChaCha8Rng,
    cfg: &ToyConfig,
    sigs: &[ClassSignature],
) -> (Array3<f32>, LabelSet) {
    let n_labels = rng.random_range(1..=3usize.min(cfg.n_classes));
    let labels: Vec<usize> = index::sample(rng, cfg.n_classes, n_labels).into_vec();
    let fields: Vec<Array2<f32>> = labels.iter().map(|_| smooth_field(rng, cfg.size)).collect();
    let s = cfg.size as f32;
    let mut img = Array3::<f32>::zeros((cfg.channels, cfg.size, cfg.size));
    for i in 0..cfg.size {
        for j in 0..cfg.size {
            let logits: Vec<f32> = fields.iter().map(|f| 3.0 * f[(i, j)]).collect();
            let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let e: Vec<f32> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f32 = e.iter().sum();
            for (w, &k) in e.iter().zip(&labels) {
                let sig = &sigs[k];
                let wave = (2.0 * PI * (sig.freq.0 * i as f32 + sig.freq.1 * j as f32) / s + sig.phase).sin();
                for c in 0..cfg.channels {
                    img[(c, i, j)] += w / z * sig.spectrum[c] * (1.0 + 0.3 * wave);
                }
            }
        }
    }
    for v in img.iter_mut() {
        let noise: f32 = StandardNormal.sample(rng);
        *v = (*v + 0.01f32 * noise).clamp(0.02, 0.7);
    }
    (img, labels.into_iter().map(|k| k as u16).collect())
}

fn corrupt(rng: &mut ChaCha8Rng, cfg: &ToyConfig, clear: &Array3<f32>) -> Result<(Array3<f32>, Array2<bool>, Array2<bool>)> {
    let s = cfg.size as f32;
    let n = cfg.size;
    for _ in 0..MAX_TRIES {
        let cloud = Ellipse {
            cy: rng.random_range(0.0..s),
            cx: rng.random_range(0.0..s),
            a: rng.random_range(0.12 * s..0.4 * s),
            b: rng.random_range(0.12 * s..0.4 * s),
            angle: rng.random_range(0.0..PI),
        };
        let shift: f32 = rng.random_range(0.8..1.2);
        let shrink: f32 = rng.random_range(0.8..1.0);
        let shadow = Ellipse {
            cy: cloud.cy + 0.25 * s * shift,
            cx: cloud.cx + 0.35 * s * shift,
            a: cloud.a * shrink,
            b: cloud.b * shrink,
            ..cloud
        };
        let opacity: f32 = rng.random_range(0.5..0.85);
        let darkness: f32 = rng.random_range(0.35..0.6);
        let color: Vec<f32> = (0..cfg.channels).map(|_| rng.random_range(0.85..0.95)).collect();

        let cloud_w = Array2::from_shape_fn((n, n), |(i, j)| ramp(cloud.radius(i, j), opacity));
        let shadow_w = Array2::from_shape_fn((n, n), |(i, j)| {
            if cloud_w[(i, j)] > 0.0 {
                0.0
            } else {
                ramp(shadow.radius(i, j), darkness)
            }
        });
        let cloud_mask = cloud_w.mapv(|w| w > 0.0);
        let shadow_mask = shadow_w.mapv(|w| w > 0.0);
        let covered = cloud_mask
            .iter()
            .zip(shadow_mask.iter())
            .filter(|(c, s)| **c || **s)
            .count() as f64
            / (n * n) as f64;
        if !(MIN_COVERAGE..=MAX_COVERAGE).contains(&covered) {
            continue;
        }
        let mut cloudy = clear.clone();
        for ((c, i, j), v) in cloudy.indexed_iter_mut() {
            let cw = cloud_w[(i, j)];
            let sw = shadow_w[(i, j)];
            if cw > 0.0 {
                *v = (1.0 - cw) * *v + cw * color[c];
            } else if sw > 0.0 {
                *v *= 1.0 - sw;
            }
        }
        return Ok((cloudy, cloud_mask, shadow_mask));
    }
    Err(Error::BadConfig(format!(
        "could not place a cloud with coverage in [{MIN_COVERAGE}, {MAX_COVERAGE}] on a {n}x{n} patch"
    )))
}

/// Per-class spectral and spatial signatures of one toy configuration.
#[derive(Debug, Clone)]
pub struct ClassTable(Vec<ClassSignature>);

impl ClassTable {
    pub fn new(cfg: &ToyConfig) -> Self {
        Self(class_signatures(cfg))
    }
}

/// Generates scene `i`; a pure function of the config seed and index.
pub fn make_toy_pair(cfg: &ToyConfig, table: &ClassTable, i: usize) -> Result<ToyPatchPair> {
    let mut rng = rng_for(cfg.seed, &format!("toy/pair/{i}"));
    let (clear, labels) = make_clear(&mut rng, cfg, &table.0);
    let (cloudy, cloud_mask, shadow_mask) = corrupt(&mut rng, cfg, &clear)?;
    Ok(ToyPatchPair {
        clear,
        cloudy,
        labels,
        cloud_mask,
        shadow_mask,
    })
}

pub fn toy_patch_id(i: usize, domain: Domain) -> String {
    format!("toy{i:05}_{}", domain.as_str())
}

/// Channel names used for toy data: visible/NIR analogues when there are
/// four channels, generic names otherwise.
pub fn toy_channel_names(channels: usize) -> Vec<String> {
    if channels == 4 {
        ["B02", "B03", "B04", "B08"].iter().map(|s| s.to_string()).collect()
    } else {
        (0..channels).map(|c| format!("C{c:02}")).collect()
    }
}

/// Generated pairs together with the unpaired-view manifest.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub config: ToyConfig,
    pub pairs: Vec<ToyPatchPair>,
    pub manifest: DatasetManifest,
}

impl ToyDataset {
    pub fn vocabulary(&self) -> LabelVocabulary {
        LabelVocabulary::numbered(self.config.n_classes)
    }

    pub fn patches(&self) -> impl Iterator<Item = Patch> + '_ {
        self.pairs.iter().enumerate().flat_map(|(i, p)| {
            [
                Patch {
                    patch_id: toy_patch_id(i, Domain::Cloudy),
                    pixels: p.cloudy.clone(),
                    labels: p.labels.clone(),
                    domain: Domain::Cloudy,
                },
                Patch {
                    patch_id: toy_patch_id(i, Domain::Clear),
                    pixels: p.clear.clone(),
                    labels: p.labels.clone(),
                    domain: Domain::Clear,
                },
            ]
        })
    }

    /// Writes `manifest.json`, `patches.bin` and the evaluation-only
    /// `pairs.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let c = &self.config;
        let mut w = StoreWriter::create(&dir.join("patches.bin"), c.channels, c.size, c.size)?;
        for p in self.patches() {
            w.write(&p)?;
        }
        w.finish()?;
        let mut manifest = self.manifest.clone();
        manifest.store = Some("patches.bin".into());
        manifest.save(&dir.join("manifest.json"))?;
        let pairs: BTreeMap<String, String> = (0..self.pairs.len())
            .map(|i| (toy_patch_id(i, Domain::Cloudy), toy_patch_id(i, Domain::Clear)))
            .collect();
        let path = dir.join("pairs.json");
        std::fs::write(&path, serde_json::to_string_pretty(&pairs)?).map_err(|e| Error::io(&path, e))
    }
}

pub fn make_toy_dataset(cfg: &ToyConfig) -> Result<ToyDataset> {
    cfg.validate()?;
    let table = ClassTable::new(cfg);
    let pairs = (0..cfg.count)
        .map(|i| make_toy_pair(cfg, &table, i))
        .collect::<Result<Vec<_>>>()?;

    // scene-level split so both views of a scene share a split
    let mut order: Vec<usize> = (0..cfg.count).collect();
    order.shuffle(&mut rng_for(cfg.seed, "toy/split"));
    let n_train = (cfg.count as f64 * cfg.split_ratios[0]).round() as usize;
    let n_val = ((cfg.count as f64 * cfg.split_ratios[1]).round() as usize).min(cfg.count - n_train);
    let mut splits = Splits::default();
    for (rank, scene) in order.iter().enumerate() {
        let bucket = if rank < n_train {
            &mut splits.train
        } else if rank < n_train + n_val {
            &mut splits.val
        } else {
            &mut splits.test
        };
        bucket.push(toy_patch_id(*scene, Domain::Cloudy));
        bucket.push(toy_patch_id(*scene, Domain::Clear));
    }
    for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
        s.sort();
    }
    let domain_of = (0..cfg.count)
        .flat_map(|i| {
            [
                (toy_patch_id(i, Domain::Cloudy), Domain::Cloudy),
                (toy_patch_id(i, Domain::Clear), Domain::Clear),
            ]
        })
        .collect();
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        label_vocabulary: LabelVocabulary::numbered(cfg.n_classes).names().to_vec(),
        channel_order: toy_channel_names(cfg.channels),
        split_seed: cfg.seed,
        split_ratios: cfg.split_ratios,
        total_patches: 2 * cfg.count,
        splits,
        domain_of,
        excluded: Vec::new(),
        store: None,
    };
    Ok(ToyDataset {
        config: *cfg,
        pairs,
        manifest,
    })
}

/// FD between the cloudy-validation and clear-validation feature
/// populations: the reference a translation model has to improve on.
pub fn toy_baseline_fd(
    manifest: &DatasetManifest,
    store: &PatchStore,
    classifier: &Classifier,
    val_max: Option<usize>,
) -> Result<FdRecord> {
    let feats = |domain| -> Result<FeatureStats> {
        let mut ids = manifest.ids(Split::Val, domain);
        if let Some(m) = val_max {
            ids.truncate(m);
        }
        fit_feature_stats(&classifier.features_of(&load_tensor(store, &ids)?)?)
    };
    let a = feats(Domain::Cloudy)?;
    let b = feats(Domain::Clear)?;
    Ok(FdRecord::new(&a, &b, frechet_distance(&a, &b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, count: usize) -> ToyConfig {
        ToyConfig {
            seed,
            count,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = make_toy_dataset(&small(7, 6)).unwrap();
        let b = make_toy_dataset(&small(7, 6)).unwrap();
        let c = make_toy_dataset(&small(8, 6)).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.manifest, b.manifest);
        assert_ne!(a.pairs[0].clear, c.pairs[0].clear);
    }

    #[test]
    fn masks_explain_every_difference() {
        let d = make_toy_dataset(&small(3, 40)).unwrap();
        for p in &d.pairs {
            assert!(p.cloudy.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(p.clear.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((1..=3).contains(&p.labels.len()));
            for ((c, i, j), v) in p.cloudy.indexed_iter() {
                let masked = p.cloud_mask[(i, j)] || p.shadow_mask[(i, j)];
                if !masked {
                    assert_eq!(*v, p.clear[(c, i, j)]);
                }
            }
            let n = p.clear.dim().0 as f32;
            for ((i, j), m) in p.cloud_mask.indexed_iter() {
                let mean = |t: &Array3<f32>| (0..p.clear.dim().0).map(|c| t[(c, i, j)]).sum::<f32>() / n;
                if *m {
                    assert!(mean(&p.cloudy) > mean(&p.clear));
                }
                if p.shadow_mask[(i, j)] {
                    assert!(!*m);
                    assert!(mean(&p.cloudy) < mean(&p.clear));
                }
            }
        }
    }

    #[test]
    fn coverage_bounds_monte_carlo() {
        let cfg = small(11, 1000);
        let table = ClassTable::new(&cfg);
        for i in 0..cfg.count {
            let p = make_toy_pair(&cfg, &table, i).unwrap();
            let cov = p.coverage();
            assert!((MIN_COVERAGE..=MAX_COVERAGE).contains(&cov), "pair {i}: {cov}");
        }
    }

    #[test]
    fn bad_configs() {
        assert!(make_toy_dataset(&small(0, 1)).is_err());
        let tiny = ToyConfig {
            size: 4,
            ..small(0, 4)
        };
        assert!(matches!(make_toy_dataset(&tiny), Err(Error::BadConfig(_))));
    }

    #[test]
    fn manifest_keeps_views_together() {
        let d = make_toy_dataset(&small(5, 50)).unwrap();
        d.manifest.validate().unwrap();
        assert_eq!(d.manifest.domain_count(Domain::Cloudy), 50);
        for split in [&d.manifest.splits.train, &d.manifest.splits.val, &d.manifest.splits.test] {
            for id in split {
                let other = if id.ends_with("_cloudy") {
                    id.replace("_cloudy", "_clear")
                } else {
                    id.replace("_clear", "_cloudy")
                };
                assert!(split.contains(&other));
            }
        }
        assert_eq!(d.manifest.splits.train.len(), 80);
    }

    #[test]
    fn writes_loadable_files() {
        let d = make_toy_dataset(&small(5, 4)).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        d.write(tmp.path()).unwrap();
        let m = DatasetManifest::load(&tmp.path().join("manifest.json")).unwrap();
        assert_eq!(m.store.as_deref(), Some("patches.bin"));
        let s = crate::data::PatchStore::open(&tmp.path().join("patches.bin")).unwrap();
        assert_eq!(s.len(), 8);
        let p = s.read(&toy_patch_id(2, Domain::Cloudy)).unwrap();
        assert_eq!(p.pixels, d.pairs[2].cloudy);
    }
}
