use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{instance_norm, leaky_relu, Conv2d, ConvSpec, Linear, ParamStore, Scope};

const IN_EPS: f64 = 1e-5;
const SLOPE: f64 = 0.2;

/// Capacities of the eight networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub gen_width: usize,
    pub gen_blocks: usize,
    pub disc_width: usize,
    /// Stride-2 layers of the image discriminator.
    pub disc_layers: usize,
    pub enc_width: usize,
    pub latent_disc_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            gen_width: 32,
            gen_blocks: 3,
            disc_width: 64,
            disc_layers: 3,
            enc_width: 32,
            latent_disc_width: 64,
        }
    }
}

/// Instance normalization whose scale and shift are predicted from `z`.
struct CondNorm {
    affine: Linear,
    ch: usize,
}

impl CondNorm {
    fn new(s: &Scope, n_z: usize, ch: usize) -> Result<Self> {
        Ok(Self {
            affine: Linear::new(s, n_z, 2 * ch, 0.1, false)?,
            ch,
        })
    }

    fn forward(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        let n = x.dim(0)?;
        let gb = self.affine.forward(z, false)?;
        let gamma = gb.narrow(1, 0, self.ch)?.reshape((n, self.ch, 1, 1))?;
        let beta = gb.narrow(1, self.ch, self.ch)?.reshape((n, self.ch, 1, 1))?;
        let h = instance_norm(x, IN_EPS)?;
        Ok(h.broadcast_mul(&(gamma + 1.0)?)?.broadcast_add(&beta)?)
    }
}

/// Nearest-neighbour 2x upsampling as broadcast + reshape.
fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .reshape((n, c, 2 * h, 2 * w))?)
}

struct ResBlock {
    c1: Conv2d,
    n1: CondNorm,
    c2: Conv2d,
    n2: CondNorm,
}

/// Latent-conditioned image-to-image generator with a bounded residual
/// output: `out = x + relu(t) (1 - x) - relu(-t) x`, `t = tanh(head)`.
/// A zero head makes the generator the identity map.
///
/// Layout: 3x3 stem, one stride-2 downsampling, residual blocks, nearest
/// upsampling of a 1x1 projection with an additive skip from the stem,
/// 3x3 head.
pub struct Generator {
    store: ParamStore,
    channels: usize,
    n_z: usize,
    c0: Conv2d,
    n0: CondNorm,
    down: Conv2d,
    nd: CondNorm,
    blocks: Vec<ResBlock>,
    up: Conv2d,
    nu: CondNorm,
    head: Conv2d,
}

impl Generator {
    pub fn new(seed: u64, channels: usize, n_z: usize, arch: &ArchConfig, spectral: bool) -> Result<Self> {
        let store = ParamStore::new(seed);
        let r = store.root();
        let w = arch.gen_width;
        let g = 2f64.sqrt();
        let conv = |name: &str, spec: ConvSpec| Conv2d::new(&r.sub(name), spec.spectral(spectral), g);
        let c0 = conv("c0", ConvSpec::new(channels, w, 3))?;
        let n0 = CondNorm::new(&r.sub("n0"), n_z, w)?;
        let down = conv("down", ConvSpec::new(w, 2 * w, 4).stride(2).padding(1))?;
        let nd = CondNorm::new(&r.sub("nd"), n_z, 2 * w)?;
        let mut blocks = Vec::new();
        for i in 0..arch.gen_blocks {
            let s = r.sub(format!("block{i}"));
            blocks.push(ResBlock {
                c1: Conv2d::new(&s.sub("c1"), ConvSpec::new(2 * w, 2 * w, 3).spectral(spectral), g)?,
                n1: CondNorm::new(&s.sub("n1"), n_z, 2 * w)?,
                c2: Conv2d::new(&s.sub("c2"), ConvSpec::new(2 * w, 2 * w, 3).spectral(spectral), 1.0)?,
                n2: CondNorm::new(&s.sub("n2"), n_z, 2 * w)?,
            });
        }
        let up = conv("up", ConvSpec::new(2 * w, w, 1))?;
        let nu = CondNorm::new(&r.sub("nu"), n_z, w)?;
        let head = Conv2d::new(&r.sub("head"), ConvSpec::new(w, channels, 3), 0.1)?;
        Ok(Self {
            store,
            channels,
            n_z,
            c0,
            n0,
            down,
            nd,
            blocks,
            up,
            nu,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Zeroes the output head so the generator returns its input exactly.
    pub fn make_identity(&self) -> Result<()> {
        self.head.zero()
    }

    fn check(&self, x: &Tensor, z: &Tensor) -> Result<()> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("[n, {}, even H, even W]", self.channels), x.dims()));
        }
        if z.dims() != [n, self.n_z] {
            return Err(Error::shape([n, self.n_z], z.dims()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, z: &Tensor, train: bool) -> Result<Tensor> {
        self.check(x, z)?;
        let h0 = self.n0.forward(&self.c0.forward(x, train)?, z)?.relu()?;
        let mut h = self.nd.forward(&self.down.forward(&h0, train)?, z)?.relu()?;
        for b in &self.blocks {
            let r = b.n1.forward(&b.c1.forward(&h, train)?, z)?.relu()?;
            let r = b.n2.forward(&b.c2.forward(&r, train)?, z)?;
            h = (h + r)?;
        }
        let up = upsample2x(&self.up.forward(&h, train)?)?;
        let h = self.nu.forward(&(up + h0)?, z)?.relu()?;
        let t = self.head.forward(&h, train)?.tanh()?;
        let brighten = t.relu()?.mul(&(x.neg()? + 1.0)?)?;
        let darken = t.neg()?.relu()?.mul(x)?;
        Ok(((x + brighten)? - darken)?)
    }
}

/// Patch discriminator: stride-2 convolutions to a score map.
pub struct ImageDiscriminator {
    store: ParamStore,
    layers: Vec<Conv2d>,
    out: Conv2d,
}

impl ImageDiscriminator {
    pub fn new(seed: u64, channels: usize, arch: &ArchConfig) -> Result<Self> {
        let store = ParamStore::new(seed);
        let r = store.root();
        let mut layers = Vec::new();
        let mut cin = channels;
        for i in 0..arch.disc_layers {
            let cout = arch.disc_width << i.min(3);
            layers.push(Conv2d::new(
                &r.sub(format!("c{i}")),
                ConvSpec::new(cin, cout, 4).stride(2).padding(1).spectral(true),
                2f64.sqrt(),
            )?);
            cin = cout;
        }
        let out = Conv2d::new(&r.sub("out"), ConvSpec::new(cin, 1, 3).spectral(true), 1.0)?;
        Ok(Self { store, layers, out })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.affine(2.0, -1.0)?;
        for l in &self.layers {
            h = leaky_relu(&l.forward(&h, train)?, SLOPE)?;
        }
        self.out.forward(&h, train)
    }
}

/// Latent encoder over an image pair (concatenated along channels).
pub struct LatentEncoder {
    store: ParamStore,
    channels: usize,
    layers: Vec<Conv2d>,
    out: Linear,
}

impl LatentEncoder {
    pub fn new(seed: u64, channels: usize, n_z: usize, arch: &ArchConfig, spectral: bool) -> Result<Self> {
        let store = ParamStore::new(seed);
        let r = store.root();
        let mut layers = Vec::new();
        let mut cin = 2 * channels;
        for i in 0..3 {
            let cout = arch.enc_width << i;
            layers.push(Conv2d::new(
                &r.sub(format!("c{i}")),
                ConvSpec::new(cin, cout, 4).stride(2).padding(1).spectral(spectral),
                2f64.sqrt(),
            )?);
            cin = cout;
        }
        let out = Linear::new(&r.sub("out"), cin, n_z, 1.0, spectral)?;
        Ok(Self {
            store,
            channels,
            layers,
            out,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward(&self, a: &Tensor, b: &Tensor, train: bool) -> Result<Tensor> {
        if a.dims() != b.dims() || a.rank() != 4 || a.dim(1)? != self.channels {
            return Err(Error::shape(a.dims(), b.dims()));
        }
        let mut h = Tensor::cat(&[a, b], 1)?.affine(2.0, -1.0)?;
        for l in &self.layers {
            h = leaky_relu(&l.forward(&h, train)?, SLOPE)?;
        }
        self.out.forward(&h.mean((2, 3))?, train)
    }
}

/// Multilayer perceptron scoring latent codes against the prior.
pub struct LatentDiscriminator {
    store: ParamStore,
    layers: Vec<Linear>,
}

impl LatentDiscriminator {
    pub fn new(seed: u64, n_z: usize, arch: &ArchConfig) -> Result<Self> {
        let store = ParamStore::new(seed);
        let r = store.root();
        let w = arch.latent_disc_width;
        let layers = vec![
            Linear::new(&r.sub("l0"), n_z, w, 2f64.sqrt(), true)?,
            Linear::new(&r.sub("l1"), w, w, 2f64.sqrt(), true)?,
            Linear::new(&r.sub("l2"), w, 1, 1.0, true)?,
        ];
        Ok(Self { store, layers })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward(&self, z: &Tensor, train: bool) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut h = z.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h, train)?;
            if i < last {
                h = leaky_relu(&h, SLOPE)?;
            }
        }
        Ok(h)
    }
}

/// The eight networks of the model.
pub struct NetworkSet {
    /// Cloudy to clear, conditioned on `z_y`.
    pub gen_xy: Generator,
    /// Clear to cloudy, conditioned on `z_x`.
    pub gen_yx: Generator,
    pub disc_x: ImageDiscriminator,
    pub disc_y: ImageDiscriminator,
    /// `(y-image, x-image) -> z_x`.
    pub enc_zx: LatentEncoder,
    /// `(x-image, y-image) -> z_y`.
    pub enc_zy: LatentEncoder,
    pub disc_zx: LatentDiscriminator,
    pub disc_zy: LatentDiscriminator,
}

pub const NETWORK_NAMES: [&str; 8] = [
    "gen_xy", "gen_yx", "disc_x", "disc_y", "enc_zx", "enc_zy", "disc_zx", "disc_zy",
];

impl NetworkSet {
    pub fn new(
        seed: u64,
        channels: usize,
        n_z: usize,
        arch: &ArchConfig,
        sn_generators: bool,
        sn_encoders: bool,
    ) -> Result<Self> {
        let s = |name: &str| crate::seed::derive_seed(seed, &format!("gan/init/{name}"));
        Ok(Self {
            gen_xy: Generator::new(s("gen_xy"), channels, n_z, arch, sn_generators)?,
            gen_yx: Generator::new(s("gen_yx"), channels, n_z, arch, sn_generators)?,
            disc_x: ImageDiscriminator::new(s("disc_x"), channels, arch)?,
            disc_y: ImageDiscriminator::new(s("disc_y"), channels, arch)?,
            enc_zx: LatentEncoder::new(s("enc_zx"), channels, n_z, arch, sn_encoders)?,
            enc_zy: LatentEncoder::new(s("enc_zy"), channels, n_z, arch, sn_encoders)?,
            disc_zx: LatentDiscriminator::new(s("disc_zx"), n_z, arch)?,
            disc_zy: LatentDiscriminator::new(s("disc_zy"), n_z, arch)?,
        })
    }

    /// Parameter stores in [`NETWORK_NAMES`] order.
    pub fn stores(&self) -> [&ParamStore; 8] {
        [
            self.gen_xy.store(),
            self.gen_yx.store(),
            self.disc_x.store(),
            self.disc_y.store(),
            self.enc_zx.store(),
            self.enc_zy.store(),
            self.disc_zx.store(),
            self.disc_zy.store(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn small() -> ArchConfig {
        ArchConfig {
            gen_width: 8,
            gen_blocks: 1,
            disc_width: 8,
            disc_layers: 3,
            enc_width: 8,
            latent_disc_width: 16,
        }
    }

    #[test]
    fn upsample_matches_nearest() {
        let x = Tensor::arange(0f32, 24., &candle_core::Device::Cpu).unwrap().reshape((1, 2, 3, 4)).unwrap();
        let a = upsample2x(&x).unwrap();
        let b = x.upsample_nearest2d(6, 8).unwrap();
        assert_eq!(a.flatten_all().unwrap().to_vec1::<f32>().unwrap(), b.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    }

    #[test]
    fn shapes_and_bounds() {
        let nets = NetworkSet::new(0, 4, 16, &small(), false, false).unwrap();
        let x = Tensor::rand(0f32, 1., (2, 4, 16, 16), &Device::Cpu).unwrap();
        let z = Tensor::randn(0f32, 1., (2, 16), &Device::Cpu).unwrap();
        let y = nets.gen_xy.forward(&x, &z, false).unwrap();
        assert_eq!(y.dims(), x.dims());
        let v = crate::nn::to_host(&y).unwrap();
        assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(nets.disc_y.forward(&y, false).unwrap().dims(), &[2, 1, 2, 2]);
        assert_eq!(nets.enc_zx.forward(&y, &x, false).unwrap().dims(), &[2, 16]);
        assert_eq!(nets.disc_zx.forward(&z, false).unwrap().dims(), &[2, 1]);
        let bad_z = Tensor::zeros((2, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(nets.gen_xy.forward(&x, &bad_z, false).is_err());
    }

    #[test]
    fn zero_head_is_identity() {
        let g = Generator::new(1, 4, 16, &small(), false).unwrap();
        g.make_identity().unwrap();
        let x = Tensor::rand(0f32, 1., (2, 4, 16, 16), &Device::Cpu).unwrap();
        let z = Tensor::randn(0f32, 1., (2, 16), &Device::Cpu).unwrap();
        let y = g.forward(&x, &z, false).unwrap();
        assert_eq!(crate::nn::to_host(&y).unwrap(), crate::nn::to_host(&x).unwrap());
    }
}
