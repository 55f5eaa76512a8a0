//! Run directories and the pipelines behind each subcommand.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::*;
use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::classifier::{train_classifier, Classifier, TrainedClassifier};
use crate::data::{
    build_manifest, make_training_pair_stream, normalize_reflectance, parse_label_metadata, read_band_stack,
    resample_to_grid, DatasetManifest, Domain, LabelVocabulary, NormalizeMode, Patch, PatchStore, Split,
    StoreWriter, MANIFEST_VERSION,
};
use crate::error::{Error, Result};
use crate::fd::{fit_feature_stats, frechet_distance_with_jitter, FdRecord, FeatureStats};
use crate::gan::{
    export_cycle_grid, export_translated_grid, load_tensor, rgb_indices, sample_latent, train_gan, translate,
    EpochSummary, GanConfig, TrainState, ValidationSet,
};
use crate::nn::to_host;
use crate::seed::{derive_seed, rng_for};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STORE_FILE: &str = "patches.bin";
pub const CLASSIFIER_CKPT: &str = "classifier.safetensors";
pub const GAN_LAST_CKPT: &str = "gan_last.safetensors";
pub const BASELINE_FD_FILE: &str = "baseline_fd.json";

pub fn gan_epoch_ckpt(epoch: usize) -> String {
    format!("gan_epoch_{epoch:04}.safetensors")
}

pub fn cycle_grid_file(epoch: usize) -> String {
    format!("cycle_grid_epoch_{epoch:04}.png")
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Serialize)]
struct RunStamp<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    version: &'static str,
    checkpoint_format: &'static str,
    manifest_format: u32,
}

/// A locked output directory holding the resolved config and a run stamp.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    _lock: DirLock,
}

impl RunDir {
    pub fn open(path: &Path, cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = DirLock::acquire(path)?;
        write_text(&path.join("config.toml"), &cfg.to_toml()?)?;
        let stamp = RunStamp {
            command,
            seed: cfg.seed,
            config_hash: cfg.hash()?,
            version: env!("CARGO_PKG_VERSION"),
            checkpoint_format: CHECKPOINT_VERSION,
            manifest_format: MANIFEST_VERSION,
        };
        write_text(&path.join("run.json"), &(serde_json::to_string_pretty(&stamp)? + "\n"))?;
        Ok(Self {
            path: path.to_path_buf(),
            _lock: lock,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Manifest and patch store of a dataset directory.
pub fn open_dataset(dir: &Path) -> Result<(DatasetManifest, PatchStore)> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    let store = PatchStore::open(&dir.join(manifest.store.as_deref().unwrap_or(STORE_FILE)))?;
    Ok((manifest, store))
}

/// B04/B03/B02 when present, else the first three channels (or the first
/// channel as grey).
pub fn display_bands(order: &[String]) -> [usize; 3] {
    rgb_indices(order).unwrap_or(if order.len() >= 3 { [0, 1, 2] } else { [0, 0, 0] })
}

pub fn label_metadata_path(patch_dir: &Path, patch_id: &str) -> PathBuf {
    patch_dir.join(format!("{patch_id}_labels_metadata.json"))
}

/// Raw patch directories to a manifest plus unit-reflectance patch store.
pub fn ingest(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    let need = |v: &Option<PathBuf>, key: &str| {
        v.clone().ok_or_else(|| Error::ValidationError {
            key: format!("data.{key}"),
            reason: "required by ingest".into(),
        })
    };
    let d = &cfg.data;
    let root = need(&d.root, "root")?;
    let vocab = match &d.vocabulary {
        Some(p) => LabelVocabulary::from_lines(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => LabelVocabulary::land_cover(),
    };
    let mut manifest = build_manifest(
        &root,
        &need(&d.cloudy_list, "cloudy_list")?,
        &need(&d.snow_list, "snow_list")?,
        vocab.names(),
        derive_seed(cfg.seed, "data/split"),
        d.split_ratios,
    )?;
    std::fs::create_dir_all(&d.dataset).map_err(|e| Error::io(&d.dataset, e))?;
    let mut writer = StoreWriter::create(&d.dataset.join(STORE_FILE), manifest.channel_order.len(), d.size, d.size)?;
    for (id, domain) in &manifest.domain_of {
        let dir = root.join(id);
        let stack = read_band_stack(&dir)?;
        let meta = label_metadata_path(&dir, id);
        let labels = parse_label_metadata(&std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?, &vocab)?;
        let grid = resample_to_grid(&stack, d.size, d.resample);
        let pixels = normalize_reflectance(&grid, NormalizeMode::Unit, None)?;
        writer.write(&Patch::new(id.clone(), pixels, labels, *domain, vocab.len())?)?;
    }
    writer.finish()?;
    manifest.store = Some(STORE_FILE.into());
    manifest.save(&d.dataset.join(MANIFEST_FILE))?;
    log::info!(
        "ingested {} patches ({} cloudy, {} clear, {} excluded)",
        manifest.domain_of.len(),
        manifest.domain_count(Domain::Cloudy),
        manifest.domain_count(Domain::Clear),
        manifest.excluded.len()
    );
    Ok(manifest)
}

/// Trains the classifier into `run`: metrics CSV, best checkpoint and the
/// cloudy-versus-clear validation baseline FD.
pub fn run_train_classifier(cfg: &ExperimentConfig, run: &RunDir) -> Result<(TrainedClassifier, FdRecord)> {
    let (manifest, store) = open_dataset(&cfg.data.dataset)?;
    let metrics = MetricsLog::create(&run.file(CLASSIFIER_CSV), &classifier_header())?;
    let trained = train_classifier(&cfg.classifier, &manifest, &store, cfg.seed, |r, _| {
        log::info!(
            "classifier epoch {} loss {:.4} P {:.4} R {:.4} F1 {:.4} F2 {:.4}",
            r.epoch,
            r.loss,
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.f1,
            r.metrics.f2
        );
        metrics.append(&classifier_row(r))
    })?;
    trained.classifier.save(
        &run.file(CLASSIFIER_CKPT),
        &[("config_hash", cfg.hash()?), ("best_epoch", trained.best_epoch.to_string())],
    )?;
    let baseline = domain_fd(&manifest, &store, &trained.classifier, Split::Val, cfg.fd.epsilon, None)?;
    write_record(&run.file(BASELINE_FD_FILE), &baseline)?;
    Ok((trained, baseline))
}

pub fn write_record(path: &Path, r: &FdRecord) -> Result<()> {
    write_text(path, &(serde_json::to_string(r)? + "\n"))
}

fn population_stats(store: &PatchStore, ids: &[String], clf: &Classifier) -> Result<(FeatureStats, nalgebra::DMatrix<f64>)> {
    let feats = clf.features_of(&load_tensor(store, ids)?)?;
    Ok((fit_feature_stats(&feats)?, feats))
}

/// FD between the cloudy and clear populations of one split.
pub fn domain_fd(
    manifest: &DatasetManifest,
    store: &PatchStore,
    clf: &Classifier,
    split: Split,
    epsilon: f64,
    dump: Option<&Path>,
) -> Result<FdRecord> {
    let (a, fa) = population_stats(store, &manifest.ids(split, Domain::Cloudy), clf)?;
    let (b, fb) = population_stats(store, &manifest.ids(split, Domain::Clear), clf)?;
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::fd::write_feature_dump(&dir.join("features_cloudy.bin"), &fa)?;
        crate::fd::write_feature_dump(&dir.join("features_clear.bin"), &fb)?;
    }
    Ok(FdRecord::new(&a, &b, frechet_distance_with_jitter(&a, &b, epsilon)?))
}

/// Hash of the GAN settings a checkpoint must agree with to be resumed;
/// the epoch budget is excluded so runs can be extended.
pub fn gan_config_hash(cfg: &GanConfig) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut c = cfg.clone();
    c.epochs = 0;
    c.lr_decay_start = None;
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GanRunOptions {
    /// Continue from `gan_last.safetensors` in the run directory.
    pub resume: bool,
    /// Accept a resume checkpoint written under different GAN settings.
    pub allow_config_mismatch: bool,
}

/// Checks a checkpoint's config hash against the current settings.
pub fn check_config_hash(ck: &Checkpoint, expected: &str, allow_mismatch: bool) -> Result<()> {
    let found = ck.meta("config_hash").unwrap_or("");
    if found == expected {
        return Ok(());
    }
    let msg = format!("checkpoint config hash {found:?} differs from current {expected:?}");
    if allow_mismatch {
        log::warn!("{msg}; continuing because the override flag is set");
        Ok(())
    } else {
        Err(Error::VersionMismatch(format!("{msg}; pass --allow-config-mismatch to override")))
    }
}

/// Trains (or resumes) the translation model into `run`.
pub fn run_train_gan(
    cfg: &ExperimentConfig,
    classifier_path: &Path,
    run: &RunDir,
    opts: GanRunOptions,
) -> Result<Vec<EpochSummary>> {
    let (manifest, store) = open_dataset(&cfg.data.dataset)?;
    let clf = Classifier::load(classifier_path)?;
    let (channels, _, _) = store.shape();
    let hash = gan_config_hash(&cfg.gan)?;
    let last = run.file(GAN_LAST_CKPT);

    let mut state = if opts.resume && last.exists() {
        let ck = Checkpoint::load(&last)?;
        check_config_hash(&ck, &hash, opts.allow_config_mismatch)?;
        let mut s = TrainState::from_checkpoint(&ck)?;
        if s.channels != channels {
            return Err(Error::shape(s.channels, channels));
        }
        s.config.epochs = cfg.gan.epochs;
        s.config.lr_decay_start = cfg.gan.lr_decay_start;
        log::info!("resuming at epoch {} step {}", s.epoch, s.step);
        s
    } else {
        if opts.resume {
            log::warn!("no checkpoint at {}; starting fresh", last.display());
        }
        TrainState::new(cfg.gan.clone(), channels, cfg.seed)?
    };
    let k = state.epoch;
    let (steps, epochs, fds) = if k > 0 {
        (
            MetricsLog::resume(&run.file(GAN_STEP_CSV), &gan_step_header(), k)?,
            MetricsLog::resume(&run.file(GAN_EPOCH_CSV), &gan_epoch_header(), k)?,
            MetricsLog::resume(&run.file(FD_CSV), &fd_header(), k)?,
        )
    } else {
        (
            MetricsLog::create(&run.file(GAN_STEP_CSV), &gan_step_header())?,
            MetricsLog::create(&run.file(GAN_EPOCH_CSV), &gan_epoch_header())?,
            MetricsLog::create(&run.file(FD_CSV), &fd_header())?,
        )
    };

    let baseline = domain_fd(&manifest, &store, &clf, Split::Val, cfg.fd.epsilon, None)?;
    write_record(&run.file(BASELINE_FD_FILE), &baseline)?;
    log::info!("baseline validation FD (cloudy vs clear) {:.4}", baseline.fd);

    let stream = make_training_pair_stream(&manifest, cfg.gan.batch_size, cfg.seed)?;
    let per_epoch = stream
        .batches_per_epoch()
        .min(cfg.gan.steps_per_epoch.unwrap_or(usize::MAX))
        .max(1);
    let val = ValidationSet::new(&manifest, &store, &clf, cfg.gan.n_z, cfg.gan.val_max, cfg.seed)?;
    let rgb = display_bands(&manifest.channel_order);
    let rows = cfg.gan.grid_rows.min(val.ids.len());
    let grid_x = val.cloudy.narrow(0, 0, rows)?;
    let grid_z = val.z.narrow(0, 0, rows)?;
    let extra = [("config_hash", hash.clone()), ("version", env!("CARGO_PKG_VERSION").to_string())];

    let out = train_gan(
        &mut state,
        &stream,
        &store,
        &val,
        &clf,
        cfg.gan.epochs,
        |r| steps.append(&gan_step_row(r, (r.step - 1) / per_epoch + 1)),
        |s, st| {
            epochs.append(&gan_epoch_row(s, st.step))?;
            fds.append(&fd_row(s.epoch, &s.fd))?;
            st.save(&run.file(&gan_epoch_ckpt(s.epoch)), &extra)?;
            st.save(&last, &extra)?;
            export_cycle_grid(
                &st.cycle_samples(&grid_x, &grid_z)?,
                rgb,
                cfg.gan.grid_gain,
                &run.file(&cycle_grid_file(s.epoch)),
            )
        },
    )?;
    export_cycle_grid(
        &state.cycle_samples(&grid_x, &grid_z)?,
        rgb,
        cfg.gan.grid_gain,
        &run.file("cycle_grid.png"),
    )?;
    Ok(out)
}

fn tensor_to_arrays(t: &candle_core::Tensor) -> Result<Vec<ndarray::Array3<f32>>> {
    let (n, c, h, w) = t.dims4()?;
    let host = to_host(t)?;
    Ok((0..n)
        .map(|i| {
            ndarray::Array3::from_shape_vec((c, h, w), host[i * c * h * w..(i + 1) * c * h * w].to_vec())
                .expect("dims match")
        })
        .collect())
}

/// Translates the cloudy patches of `split` with the X-to-Y generator into
/// a patch store under `out`, plus source and translated grids.
pub fn run_translate(
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    split: Split,
    max: Option<usize>,
    seed: u64,
    gain: f64,
) -> Result<usize> {
    let (manifest, store) = open_dataset(dataset)?;
    let state = TrainState::load(checkpoint)?;
    let mut ids = manifest.ids(split, Domain::Cloudy);
    if let Some(m) = max {
        ids.truncate(m);
    }
    if ids.is_empty() {
        return Err(Error::EmptyDomain("cloudy"));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = DirLock::acquire(out)?;
    let (c, h, w) = store.shape();
    let mut writer = StoreWriter::create(&out.join("translated.bin"), c, h, w)?;
    let mut rng = rng_for(seed, "translate/z");
    let n_classes = manifest.label_vocabulary.len();
    let rgb = display_bands(&manifest.channel_order);
    let (mut sources, mut translated) = (Vec::new(), Vec::new());
    for chunk in ids.chunks(32) {
        let x = load_tensor(&store, chunk)?;
        let z = sample_latent(&mut rng, chunk.len(), state.config.n_z)?;
        let y = tensor_to_arrays(&translate(state.eval_gen_xy(), &x, &z)?)?;
        for (id, pixels) in chunk.iter().zip(y) {
            let labels = store.labels(id).cloned().unwrap_or_default();
            let pixels = pixels.mapv(|v| v.clamp(0.0, 1.0));
            if translated.len() < 9 {
                sources.push(store.read(id)?.pixels);
                translated.push(pixels.clone());
            }
            writer.write(&Patch::new(id.clone(), pixels, labels, Domain::Clear, n_classes)?)?;
        }
    }
    writer.finish()?;
    export_translated_grid(&sources, 3, rgb, gain, &out.join("source_grid.png"))?;
    export_translated_grid(&translated, 3, rgb, gain, &out.join("translated_grid.png"))?;
    Ok(ids.len())
}

/// Cycle grid (source, translated, restored) for the first `rows` cloudy
/// patches of `split`.
pub fn run_export_grid(
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    split: Split,
    rows: usize,
    seed: u64,
    gain: f64,
) -> Result<()> {
    let (manifest, store) = open_dataset(dataset)?;
    let state = TrainState::load(checkpoint)?;
    let mut ids = manifest.ids(split, Domain::Cloudy);
    ids.truncate(rows.max(1));
    if ids.is_empty() {
        return Err(Error::EmptyDomain("cloudy"));
    }
    let x = load_tensor(&store, &ids)?;
    let z = sample_latent(&mut rng_for(seed, "grid/z"), ids.len(), state.config.n_z)?;
    export_cycle_grid(
        &state.cycle_samples(&x, &z)?,
        display_bands(&manifest.channel_order),
        gain,
        out,
    )
}
