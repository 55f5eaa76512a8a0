use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvSpec, Linear, ParamStore, Scope};

/// Shape and width of the 18-layer residual network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNetConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    /// Width of the first stage; stages use 1x, 2x, 4x and 8x this.
    pub base_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// 2x2 max pooling after the stem.
    pub stem_pool: bool,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 12,
            n_classes: 43,
            base_width: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
        }
    }
}

impl ResNetConfig {
    pub fn feature_dim(&self) -> usize {
        8 * self.base_width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, r: &str| {
            Err(Error::ValidationError {
                key: k.into(),
                reason: r.into(),
            })
        };
        if self.in_channels == 0 {
            return bad("in_channels", "must be positive");
        }
        if self.n_classes < 2 {
            return bad("n_classes", "must be at least 2");
        }
        if self.base_width == 0 {
            return bad("base_width", "must be positive");
        }
        if self.stem_kernel == 0 || self.stem_stride == 0 {
            return bad("stem_kernel", "kernel and stride must be positive");
        }
        Ok(())
    }
}

struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(s: &Scope, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let relu_gain = 2f64.sqrt();
        let shortcut = if stride != 1 || cin != cout {
            Some((
                Conv2d::new(
                    &s.sub("down"),
                    ConvSpec::new(cin, cout, 1).stride(stride).no_bias(),
                    1.0,
                )?,
                BatchNorm2d::new(&s.sub("down_bn"), cout)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(
                &s.sub("conv1"),
                ConvSpec::new(cin, cout, 3).stride(stride).no_bias(),
                relu_gain,
            )?,
            bn1: BatchNorm2d::new(&s.sub("bn1"), cout)?,
            conv2: Conv2d::new(&s.sub("conv2"), ConvSpec::new(cout, cout, 3).no_bias(), relu_gain)?,
            bn2: BatchNorm2d::new(&s.sub("bn2"), cout)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x, train)?, train)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h, train)?, train)?;
        let skip = match &self.shortcut {
            Some((c, bn)) => bn.forward(&c.forward(x, train)?, train)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

/// 18-layer residual network: stem, four stages of two basic blocks,
/// global average pooling (the feature tap) and a linear head.
pub struct ResNet18 {
    pub config: ResNetConfig,
    store: ParamStore,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<BasicBlock>,
    pub head: Linear,
}

impl ResNet18 {
    pub fn new(config: ResNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(seed);
        let root = store.root();
        let w = config.base_width;
        let stem = Conv2d::new(
            &root.sub("stem"),
            ConvSpec::new(config.in_channels, w, config.stem_kernel)
                .stride(config.stem_stride)
                .no_bias(),
            2f64.sqrt(),
        )?;
        let stem_bn = BatchNorm2d::new(&root.sub("stem_bn"), w)?;
        let mut blocks = Vec::new();
        let mut cin = w;
        for (stage, mult) in [1, 2, 4, 8].into_iter().enumerate() {
            let cout = w * mult;
            for b in 0..2 {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(
                    &root.sub(format!("layer{}", stage + 1)).sub(b),
                    cin,
                    cout,
                    stride,
                )?);
                cin = cout;
            }
        }
        let head = Linear::new(&root.sub("head"), cin, config.n_classes, 1.0, false)?;
        Ok(Self {
            config,
            store,
            stem,
            stem_bn,
            blocks,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels || h == 0 || w == 0 {
            return Err(Error::shape(
                format!("[n, {}, H, W]", self.config.in_channels),
                x.dims(),
            ));
        }
        Ok(())
    }

    /// Pooled penultimate activations `[n, feature_dim]`.
    pub fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.stem_bn.forward(&self.stem.forward(x, train)?, train)?.relu()?;
        if self.config.stem_pool && h.dim(2)? >= 2 && h.dim(3)? >= 2 {
            h = h.max_pool2d(2)?;
        }
        for b in &self.blocks {
            h = b.forward(&h, train)?;
        }
        Ok(h.mean((2, 3))?)
    }

    /// `(logits, features)`.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let f = self.features(x, train)?;
        Ok((self.head.forward(&f, train)?, f))
    }
}
