use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::GanConfig;
use super::grid::CycleSample;
use super::losses::{cycle_losses, discriminator_loss, generator_loss};
use super::nets::{Generator, LatentEncoder, NetworkSet, NETWORK_NAMES};
use crate::checkpoint::Checkpoint;
use crate::classifier::{patches_to_tensor, Classifier};
use crate::data::{DatasetManifest, Domain, Patch, PatchStore, PairStream, Split};
use crate::error::{Error, Result};
use crate::fd::{fit_feature_stats, frechet_distance, FdRecord, FeatureStats};
use crate::nn::{scalar, tensor_from, Adam, AdamConfig, Optimizer};
use crate::seed::rng_for;

const EVAL_BATCH: usize = 32;

/// i.i.d. standard-normal codes, `[count, n_z]`.
pub fn sample_latent<R: Rng + ?Sized>(rng: &mut R, count: usize, n_z: usize) -> Result<Tensor> {
    let v: Vec<f32> = (0..count * n_z).map(|_| StandardNormal.sample(rng)).collect();
    tensor_from(v, &[count, n_z])
}

fn batched(t: &Tensor, rank: usize) -> Result<(Tensor, bool)> {
    if t.rank() == rank - 1 {
        Ok((t.unsqueeze(0)?, true))
    } else {
        Ok((t.clone(), false))
    }
}

/// Translates an image `[C, H, W]` (or a batch) with code `z` `[n_z]`
/// (or `[n, n_z]`) in evaluation mode. Inputs are clipped to `[0, 1]`.
pub fn translate(generator: &Generator, image: &Tensor, z: &Tensor) -> Result<Tensor> {
    let (x, single) = batched(image, 4)?;
    let (z, _) = batched(z, 2)?;
    let y = generator.forward(&x.clamp(0f32, 1f32)?, &z, false)?;
    if single {
        Ok(y.squeeze(0)?)
    } else {
        Ok(y)
    }
}

pub fn encode_latent(encoder: &LatentEncoder, source: &Tensor, translated: &Tensor) -> Result<Tensor> {
    let (a, single) = batched(source, 4)?;
    let (b, _) = batched(translated, 4)?;
    let z = encoder.forward(&a, &b, false)?;
    if single {
        Ok(z.squeeze(0)?)
    } else {
        Ok(z)
    }
}

/// Every named loss of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub d_x: f64,
    pub d_y: f64,
    pub d_zx: f64,
    pub d_zy: f64,
    pub g_adv_x: f64,
    pub g_adv_y: f64,
    pub g_adv_zx: f64,
    pub g_adv_zy: f64,
    pub cyc_img_x: f64,
    pub cyc_img_y: f64,
    pub cyc_z_x: f64,
    pub cyc_z_y: f64,
    /// Generator/encoder objective: sum of the eight `g_*` and `cyc_*` terms.
    pub gen_total: f64,
}

impl LossRecord {
    pub const NAMES: [&'static str; 13] = [
        "d_x", "d_y", "d_zx", "d_zy", "g_adv_x", "g_adv_y", "g_adv_zx", "g_adv_zy", "cyc_img_x",
        "cyc_img_y", "cyc_z_x", "cyc_z_y", "gen_total",
    ];

    pub fn values(&self) -> [f64; 13] {
        [
            self.d_x,
            self.d_y,
            self.d_zx,
            self.d_zy,
            self.g_adv_x,
            self.g_adv_y,
            self.g_adv_zx,
            self.g_adv_zy,
            self.cyc_img_x,
            self.cyc_img_y,
            self.cyc_z_x,
            self.cyc_z_y,
            self.gen_total,
        ]
    }

    fn from_values(step: usize, v: [f64; 13]) -> Self {
        Self {
            step,
            d_x: v[0],
            d_y: v[1],
            d_zx: v[2],
            d_zy: v[3],
            g_adv_x: v[4],
            g_adv_y: v[5],
            g_adv_zx: v[6],
            g_adv_zy: v[7],
            cyc_img_x: v[8],
            cyc_img_y: v[9],
            cyc_z_x: v[10],
            cyc_z_y: v[11],
            gen_total: v[12],
        }
    }

    /// Sum of the generator-side components.
    pub fn generator_components_sum(&self) -> f64 {
        self.values()[4..12].iter().sum()
    }

    /// Component-wise mean of a nonempty slice of records.
    pub fn mean(records: &[LossRecord]) -> LossRecord {
        let mut acc = [0.0; 13];
        for r in records {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let n = records.len().max(1) as f64;
        let step = records.last().map_or(0, |r| r.step);
        LossRecord::from_values(step, acc.map(|a| a / n))
    }
}

/// Networks, optimizer state, latent RNG and progress counters.
pub struct TrainState {
    pub config: GanConfig,
    pub channels: usize,
    pub nets: NetworkSet,
    /// One optimizer per network, in [`NETWORK_NAMES`] order.
    opts: Vec<Adam>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimization steps.
    pub step: usize,
    rng: ChaCha8Rng,
    seed: u64,
    /// Running averages of `gen_xy` and `gen_yx`.
    ema: Option<(Generator, Generator)>,
}

fn is_discriminator(name: &str) -> bool {
    name.starts_with("disc")
}

impl TrainState {
    pub fn new(config: GanConfig, channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let nets = NetworkSet::new(
            seed,
            channels,
            config.n_z,
            &config.arch,
            config.sn_generators,
            config.sn_encoders,
        )?;
        let opts = NETWORK_NAMES
            .iter()
            .zip(nets.stores())
            .map(|(name, store)| {
                let lr = if is_discriminator(name) {
                    config.lr_disc
                } else {
                    config.lr_gen
                };
                Adam::new(
                    store.trainable_vars(),
                    AdamConfig {
                        lr,
                        beta1: config.beta1,
                        beta2: config.beta2,
                        eps: 1e-8,
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let ema = match config.ema_decay {
            Some(_) => {
                let s = |name: &str| crate::seed::derive_seed(seed, &format!("gan/init/{name}"));
                let a = Generator::new(s("gen_xy"), channels, config.n_z, &config.arch, config.sn_generators)?;
                let b = Generator::new(s("gen_yx"), channels, config.n_z, &config.arch, config.sn_generators)?;
                a.store().copy_from(nets.gen_xy.store())?;
                b.store().copy_from(nets.gen_yx.store())?;
                Some((a, b))
            }
            None => None,
        };
        Ok(Self {
            config,
            channels,
            nets,
            opts,
            epoch: 0,
            step: 0,
            rng: rng_for(seed, "gan/latent"),
            seed,
            ema,
        })
    }

    /// Cloudy-to-clear generator used for evaluation: the running
    /// average when enabled, else the live network.
    pub fn eval_gen_xy(&self) -> &Generator {
        self.ema.as_ref().map_or(&self.nets.gen_xy, |e| &e.0)
    }

    pub fn eval_gen_yx(&self) -> &Generator {
        self.ema.as_ref().map_or(&self.nets.gen_yx, |e| &e.1)
    }

    fn update_ema(&self) -> Result<()> {
        let (Some((a, b)), Some(decay)) = (&self.ema, self.config.ema_decay) else {
            return Ok(());
        };
        // short warm-up so early averages are not dominated by the init
        let t = self.step as f64;
        let d = decay.min((1.0 + t) / (10.0 + t));
        for (avg, live) in [(a, &self.nets.gen_xy), (b, &self.nets.gen_yx)] {
            for (name, var) in avg.store().trainable_vars() {
                let w = live.store().get(&name).expect("same structure").as_detached_tensor();
                let v = (var.as_detached_tensor().affine(d, 0.0)? + w.affine(1.0 - d, 0.0)?)?;
                var.set(&v)?;
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn step_nets(&mut self, grads: &candle_core::backprop::GradStore, discriminators: bool) -> Result<()> {
        for (name, opt) in NETWORK_NAMES.iter().zip(self.opts.iter_mut()) {
            if is_discriminator(name) == discriminators {
                opt.step(grads)?;
            }
        }
        Ok(())
    }

    /// One optimization step on a cloudy batch `x` and a clear batch `y`:
    /// discriminators on detached samples first, then generators and
    /// encoders.
    pub fn train_step(&mut self, x: &Tensor, y: &Tensor) -> Result<LossRecord> {
        if x.rank() != 4 || x.dims() != y.dims() || x.dim(1)? != self.channels || x.dim(0)? == 0 {
            return Err(Error::shape(x.dims(), y.dims()));
        }
        let n = x.dim(0)?;
        let c = self.config.clone();
        let factor = c.lr_factor(self.epoch);
        for (name, opt) in NETWORK_NAMES.iter().zip(self.opts.iter_mut()) {
            let base = if is_discriminator(name) { c.lr_disc } else { c.lr_gen };
            opt.set_learning_rate(base * factor);
        }
        let z_y = sample_latent(&mut self.rng, n, c.n_z)?;
        let z_x = sample_latent(&mut self.rng, n, c.n_z)?;
        let k = c.adversarial;
        let nets = &self.nets;

        // X-cycle
        let y_hat = nets.gen_xy.forward(x, &z_y, true)?;
        let zx_hat = nets.enc_zx.forward(&y_hat, x, true)?;
        let x_rec = nets.gen_yx.forward(&y_hat, &zx_hat, true)?;
        let zy_rec = nets.enc_zy.forward(x, &y_hat, true)?;
        // Y-cycle
        let x_hat = nets.gen_yx.forward(y, &z_x, true)?;
        let zy_hat = nets.enc_zy.forward(&x_hat, y, true)?;
        let y_rec = nets.gen_xy.forward(&x_hat, &zy_hat, true)?;
        let zx_rec = nets.enc_zx.forward(y, &x_hat, true)?;

        let d_x = discriminator_loss(
            &nets.disc_x.forward(x, true)?,
            &nets.disc_x.forward(&x_hat.detach(), true)?,
            k,
        )?;
        let d_y = discriminator_loss(
            &nets.disc_y.forward(y, true)?,
            &nets.disc_y.forward(&y_hat.detach(), true)?,
            k,
        )?;
        let d_zx = discriminator_loss(
            &nets.disc_zx.forward(&z_x, true)?,
            &nets.disc_zx.forward(&zx_hat.detach(), true)?,
            k,
        )?;
        let d_zy = discriminator_loss(
            &nets.disc_zy.forward(&z_y, true)?,
            &nets.disc_zy.forward(&zy_hat.detach(), true)?,
            k,
        )?;
        let d_terms = [d_x, d_y, d_zx, d_zy];
        let d_total = d_terms.iter().skip(1).try_fold(d_terms[0].clone(), |a, t| a.add(t))?;
        let mut values = [0.0; 13];
        for (i, t) in d_terms.iter().enumerate() {
            values[i] = scalar(t)?;
        }
        check_components(&values[..4], 0)?;
        let grads = d_total.backward()?;
        self.step_nets(&grads, true)?;

        let nets = &self.nets;
        let g_adv_x = generator_loss(&nets.disc_x.forward(&x_hat, true)?, k)?;
        let g_adv_y = generator_loss(&nets.disc_y.forward(&y_hat, true)?, k)?;
        let g_adv_zx = generator_loss(&nets.disc_zx.forward(&zx_hat, true)?, k)?;
        let g_adv_zy = generator_loss(&nets.disc_zy.forward(&zy_hat, true)?, k)?;
        let (cyc_img_x, cyc_z_y) = cycle_losses(x, &x_rec, &z_y, &zy_rec, c.lambda_img, c.lambda_z)?;
        let (cyc_img_y, cyc_z_x) = cycle_losses(y, &y_rec, &z_x, &zx_rec, c.lambda_img, c.lambda_z)?;
        let g_terms = [g_adv_x, g_adv_y, g_adv_zx, g_adv_zy, cyc_img_x, cyc_img_y, cyc_z_x, cyc_z_y];
        let g_total = g_terms.iter().skip(1).try_fold(g_terms[0].clone(), |a, t| a.add(t))?;
        for (i, t) in g_terms.iter().enumerate() {
            values[4 + i] = scalar(t)?;
        }
        values[12] = scalar(&g_total)?;
        check_components(&values[4..], 4)?;
        let grads = g_total.backward()?;
        self.step_nets(&grads, false)?;

        self.step += 1;
        self.update_ema()?;
        Ok(LossRecord::from_values(self.step, values))
    }

    /// X-cycle samples (`x`, translated, restored) with fixed codes.
    pub fn cycle_samples(&self, x: &Tensor, z_y: &Tensor) -> Result<Vec<CycleSample>> {
        let y_hat = translate(self.eval_gen_xy(), x, z_y)?;
        let zx = encode_latent(&self.nets.enc_zx, &y_hat, x)?;
        let x_rec = translate(self.eval_gen_yx(), &y_hat, &zx)?;
        (0..x.dim(0)?)
            .map(|i| {
                Ok(CycleSample {
                    x: to_array(&x.get(i)?)?,
                    y_hat: to_array(&y_hat.get(i)?)?,
                    x_rec: to_array(&x_rec.get(i)?)?,
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut ck = Checkpoint::new();
        for (name, store) in NETWORK_NAMES.iter().zip(self.nets.stores()) {
            ck.insert_tensors(&format!("{name}."), store.tensors());
        }
        let mut opt_state = BTreeMap::new();
        for (name, opt) in NETWORK_NAMES.iter().zip(&self.opts) {
            opt.export_state(&format!("opt.{name}."), &mut opt_state)?;
        }
        ck.tensors.extend(opt_state);
        if let Some((a, b)) = &self.ema {
            ck.insert_tensors("ema_xy.", a.store().tensors());
            ck.insert_tensors("ema_yx.", b.store().tensors());
        }
        ck.set_meta("kind", "gan");
        ck.set_meta("gan_config", serde_json::to_string(&self.config)?);
        ck.set_meta("channels", self.channels);
        ck.set_meta("epoch", self.epoch);
        ck.set_meta("step", self.step);
        ck.set_meta("seed", self.seed);
        ck.set_meta("rng_seed", hex::encode(self.rng.get_seed()));
        ck.set_meta("rng_word_pos", self.rng.get_word_pos());
        for (k, v) in extra {
            ck.set_meta(k, v);
        }
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "gan" {
            return Err(Error::VersionMismatch(format!(
                "expected a translation-model checkpoint, found {}",
                ck.meta("kind")?
            )));
        }
        let parse = |k: &str| -> Result<u128> {
            ck.meta(k)?
                .parse()
                .map_err(|_| Error::ParseError(format!("checkpoint metadata {k}")))
        };
        let config: GanConfig = ck.meta_json("gan_config")?;
        let mut state = Self::new(config, parse("channels")? as usize, parse("seed")? as u64)?;
        let tensors = ck.tensor_map();
        for (name, store) in NETWORK_NAMES.iter().zip(state.nets.stores()) {
            store.load(&tensors, &format!("{name}."))?;
        }
        for (name, opt) in NETWORK_NAMES.iter().zip(state.opts.iter_mut()) {
            opt.import_state(&format!("opt.{name}."), &tensors)?;
        }
        if let Some((a, b)) = &state.ema {
            a.store().load(&tensors, "ema_xy.")?;
            b.store().load(&tensors, "ema_yx.")?;
        }
        state.epoch = parse("epoch")? as usize;
        state.step = parse("step")? as usize;
        let seed: [u8; 32] = hex::decode(ck.meta("rng_seed")?)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| Error::ParseError("checkpoint metadata rng_seed".into()))?;
        state.rng = ChaCha8Rng::from_seed(seed);
        state.rng.set_word_pos(parse("rng_word_pos")?);
        Ok(state)
    }
}

fn check_components(values: &[f64], offset: usize) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::DivergedStep {
                component: LossRecord::NAMES[offset + i].to_string(),
                value: *v,
            });
        }
    }
    Ok(())
}

fn to_array(t: &Tensor) -> Result<ndarray::Array3<f32>> {
    let (c, h, w) = t.dims3()?;
    Ok(ndarray::Array3::from_shape_vec((c, h, w), crate::nn::to_host(t)?).expect("dims match"))
}

/// Fixed validation material: cloudy patches with per-patch codes and the
/// clear-population feature statistics.
pub struct ValidationSet {
    pub ids: Vec<String>,
    pub cloudy: Tensor,
    pub z: Tensor,
    pub clear_stats: FeatureStats,
}

impl ValidationSet {
    pub fn new(
        manifest: &DatasetManifest,
        store: &PatchStore,
        classifier: &Classifier,
        n_z: usize,
        val_max: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let cap = |mut ids: Vec<String>| {
            if let Some(m) = val_max {
                ids.truncate(m);
            }
            ids
        };
        let ids = cap(manifest.ids(Split::Val, Domain::Cloudy));
        let clear_ids = cap(manifest.ids(Split::Val, Domain::Clear));
        if ids.len() < 2 {
            return Err(Error::TooFewSamples(ids.len()));
        }
        let cloudy = load_tensor(store, &ids)?;
        let clear = load_tensor(store, &clear_ids)?;
        let clear_stats = fit_feature_stats(&classifier.features_of(&clear)?)?;
        let z = sample_latent(&mut rng_for(seed, "gan/val_z"), ids.len(), n_z)?;
        Ok(Self {
            ids,
            cloudy,
            z,
            clear_stats,
        })
    }

    /// Translated cloudy validation patches.
    pub fn translated(&self, state: &TrainState) -> Result<Tensor> {
        let n = self.cloudy.dim(0)?;
        let mut parts = Vec::new();
        for start in (0..n).step_by(EVAL_BATCH) {
            let len = EVAL_BATCH.min(n - start);
            parts.push(translate(
                state.eval_gen_xy(),
                &self.cloudy.narrow(0, start, len)?,
                &self.z.narrow(0, start, len)?,
            )?);
        }
        Ok(Tensor::cat(&parts, 0)?)
    }
}

pub fn load_tensor(store: &PatchStore, ids: &[String]) -> Result<Tensor> {
    let patches = store.read_many(ids)?;
    let refs: Vec<&Patch> = patches.iter().collect();
    patches_to_tensor(&refs)
}

/// FD between translated cloudy validation patches and clear validation
/// patches in classifier feature space. Does not modify `state`.
pub fn validate_epoch(state: &TrainState, val: &ValidationSet, classifier: &Classifier) -> Result<FdRecord> {
    let feats = classifier.features_of(&val.translated(state)?)?;
    let stats = fit_feature_stats(&feats)?;
    let fd = frechet_distance(&stats, &val.clear_stats)?;
    Ok(FdRecord::new(&stats, &val.clear_stats, fd))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean: LossRecord,
    pub fd: FdRecord,
}

fn random_crop(x: &Tensor, size: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if size >= h && size >= w {
        return Ok(x.clone());
    }
    let top = rng.random_range(0..=h - size.min(h));
    let left = rng.random_range(0..=w - size.min(w));
    Ok(x.narrow(2, top, size.min(h))?.narrow(3, left, size.min(w))?.contiguous()?)
}

/// Runs epochs `state.epoch + 1 ..= target_epochs`.
#[allow(clippy::too_many_arguments)]
pub fn train_gan(
    state: &mut TrainState,
    stream: &PairStream,
    store: &PatchStore,
    val: &ValidationSet,
    classifier: &Classifier,
    target_epochs: usize,
    mut on_step: impl FnMut(&LossRecord) -> Result<()>,
    mut on_epoch: impl FnMut(&EpochSummary, &TrainState) -> Result<()>,
) -> Result<Vec<EpochSummary>> {
    let mut out = Vec::new();
    while state.epoch < target_epochs {
        let e = state.epoch;
        let mut records = Vec::new();
        let cap = state.config.steps_per_epoch.unwrap_or(usize::MAX);
        for batch in stream.epoch(e).take(cap) {
            let mut x = load_tensor(store, &batch.cloudy)?;
            let mut y = load_tensor(store, &batch.clear)?;
            if let Some(size) = state.config.crop {
                let mut rng = rng_for(state.seed, &format!("gan/crop/{}", state.step));
                x = random_crop(&x, size, &mut rng)?;
                y = random_crop(&y, size, &mut rng)?;
            }
            let r = state.train_step(&x, &y)?;
            on_step(&r)?;
            records.push(r);
        }
        state.epoch += 1;
        let fd = validate_epoch(state, val, classifier)?;
        let summary = EpochSummary {
            epoch: state.epoch,
            mean: LossRecord::mean(&records),
            fd,
        };
        log::info!(
            "gan epoch {} step {} gen_total {:.4} fd {:.4}",
            summary.epoch,
            state.step,
            summary.mean.gen_total,
            fd.fd
        );
        on_epoch(&summary, state)?;
        out.push(summary);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::ArchConfig;
    use candle_core::Device;

    fn tiny() -> GanConfig {
        GanConfig {
            batch_size: 2,
            arch: ArchConfig {
                gen_width: 4,
                gen_blocks: 1,
                disc_width: 4,
                disc_layers: 2,
                enc_width: 4,
                latent_disc_width: 8,
            },
            ..Default::default()
        }
    }

    fn batch(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..2 * 3 * 8 * 8).map(|_| rng.random()).collect();
        Tensor::from_vec(v, (2, 3, 8, 8), &Device::Cpu).unwrap()
    }

    #[test]
    fn latent_moments_and_determinism() {
        let a = sample_latent(&mut rng_for(1, "z"), 4, 16).unwrap();
        let b = sample_latent(&mut rng_for(1, "z"), 4, 16).unwrap();
        assert_eq!(a.dims(), &[4, 16]);
        assert_eq!(a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());

        let n = 100_000;
        let z = sample_latent(&mut rng_for(2, "z"), n, 4).unwrap().to_vec2::<f32>().unwrap();
        for c in 0..4 {
            let mean = z.iter().map(|r| r[c] as f64).sum::<f64>() / n as f64;
            let var = z.iter().map(|r| (r[c] as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.02, "{mean}");
            assert!((var - 1.0).abs() < 0.02, "{var}");
        }
    }

    #[test]
    fn step_updates_every_network_and_accounts_losses() {
        let mut s = TrainState::new(tiny(), 3, 5).unwrap();
        let before: Vec<_> = s.nets.stores().iter().map(|st| st.tensors()).collect::<Vec<_>>();
        let before: Vec<BTreeMap<String, Vec<f32>>> = before
            .iter()
            .map(|m| m.iter().map(|(k, t)| (k.clone(), crate::nn::to_host(t).unwrap())).collect())
            .collect();
        let r = s.train_step(&batch(1), &batch(2)).unwrap();
        for v in r.values() {
            assert!(v.is_finite() && v >= 0.0);
        }
        assert!((r.gen_total - r.generator_components_sum()).abs() < 1e-6);
        for (i, st) in s.nets.stores().iter().enumerate() {
            let changed = st.trainable_vars().iter().any(|(k, v)| {
                crate::nn::to_host(v.as_tensor()).unwrap() != before[i][k]
            });
            assert!(changed, "{} did not change", NETWORK_NAMES[i]);
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn identity_generators_have_zero_image_cycle() {
        let s = TrainState::new(tiny(), 3, 5).unwrap();
        s.nets.gen_xy.make_identity().unwrap();
        s.nets.gen_yx.make_identity().unwrap();
        let x = batch(3);
        let z = sample_latent(&mut rng_for(0, "z"), 2, 16).unwrap();
        let y_hat = s.nets.gen_xy.forward(&x, &z, true).unwrap();
        let zx = s.nets.enc_zx.forward(&y_hat, &x, true).unwrap();
        let x_rec = s.nets.gen_yx.forward(&y_hat, &zx, true).unwrap();
        let (img, _) = cycle_losses(&x, &x_rec, &z, &z, 10.0, 0.1).unwrap();
        assert_eq!(scalar(&img).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_loss_stream() {
        let run = || {
            let mut s = TrainState::new(tiny(), 3, 9).unwrap();
            (0..10)
                .map(|i| s.train_step(&batch(i), &batch(100 + i)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn translate_and_encode_contracts() {
        let s = TrainState::new(tiny(), 3, 5).unwrap();
        let x = batch(4).get(0).unwrap();
        let z = sample_latent(&mut rng_for(0, "z"), 1, 16).unwrap().squeeze(0).unwrap();
        let a = translate(&s.nets.gen_xy, &x, &z).unwrap();
        let b = translate(&s.nets.gen_xy, &x, &z).unwrap();
        assert_eq!(a.dims(), x.dims());
        assert_eq!(crate::nn::to_host(&a).unwrap(), crate::nn::to_host(&b).unwrap());
        let code = encode_latent(&s.nets.enc_zx, &a, &x).unwrap();
        assert_eq!(code.dims(), &[16]);
        assert_eq!(
            crate::nn::to_host(&code).unwrap(),
            crate::nn::to_host(&encode_latent(&s.nets.enc_zx, &a, &x).unwrap()).unwrap()
        );
        let wrong = Tensor::zeros((2, 8, 8), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(translate(&s.nets.gen_xy, &wrong, &z).is_err());
    }

    #[test]
    fn checkpoint_round_trip_resumes_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("gan.safetensors");
        let mut a = TrainState::new(tiny(), 3, 11).unwrap();
        a.train_step(&batch(1), &batch(2)).unwrap();
        a.save(&p, &[]).unwrap();
        let mut b = TrainState::load(&p).unwrap();
        let x = batch(7);
        let z = sample_latent(&mut rng_for(3, "z"), 2, 16).unwrap();
        assert_eq!(
            crate::nn::to_host(&translate(&a.nets.gen_xy, &x, &z).unwrap()).unwrap(),
            crate::nn::to_host(&translate(&b.nets.gen_xy, &x, &z).unwrap()).unwrap()
        );
        let ra = a.train_step(&batch(5), &batch(6)).unwrap();
        let rb = b.train_step(&batch(5), &batch(6)).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn ema_tracks_and_survives_checkpoint() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("gan.safetensors");
        let cfg = GanConfig {
            ema_decay: Some(0.9),
            ..tiny()
        };
        let mut a = TrainState::new(cfg, 3, 13).unwrap();
        let x = batch(7);
        let z = sample_latent(&mut rng_for(3, "z"), 2, 16).unwrap();
        let host = |g: &Generator| crate::nn::to_host(&translate(g, &x, &z).unwrap()).unwrap();
        assert_eq!(host(a.eval_gen_xy()), host(&a.nets.gen_xy));
        for i in 0..3 {
            a.train_step(&batch(i), &batch(10 + i)).unwrap();
        }
        assert_ne!(host(a.eval_gen_xy()), host(&a.nets.gen_xy));
        a.save(&p, &[]).unwrap();
        let b = TrainState::load(&p).unwrap();
        assert_eq!(host(a.eval_gen_xy()), host(b.eval_gen_xy()));
        assert_eq!(host(a.eval_gen_yx()), host(b.eval_gen_yx()));
    }
}
