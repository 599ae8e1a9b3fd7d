//! Five-stage symmetric encoder/decoder assembled from separable
//! convolutions and MEWB stacks.
//!
//! ```text
//! enc1: sep(in → c0)                          H
//! enc2: sep(c0 → c1, /2) + MEWB × n0          H/2
//! enc3: sep(c1 → c2, /2) + MEWB × n1          H/4
//! enc4: sep(c2 → c3, /2) + MEWB × n2          H/8
//! enc5: sep(c3 → c4, /2) + MEWB × n3          H/16
//! dec4: up ×2, sep(c4 → c3) + enc4, MEWB × n2
//! dec3: up ×2, sep(c3 → c2) + enc3, MEWB × n1
//! dec2: up ×2, sep(c2 → c1) + enc2, MEWB × n0
//! dec1: up ×2, sep(c1 → c0) + enc1
//! head: 1×1 conv c0 → num_classes
//! ```
//!
//! Every `sep` is depthwise 3×3 then pointwise, followed by the configured
//! norm and GELU. Skips are added, not concatenated.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{MewError, Result};
use crate::kv::{join, KeyValues};
use crate::mew::{Branches, MewConfig, Mewb};
use crate::nn::{Builder, Norm, NormKind, Pointwise, SeparableConv};
use crate::tensor::{ParamStore, Session, Tensor, Var};

pub const STAGES: usize = 5;
pub const DOWNSAMPLE: usize = 1 << (STAGES - 1);

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stage_channels: [usize; STAGES],
    /// MEWB counts for stages 2..=5 (mirrored in the decoder).
    pub mewb_counts: [usize; STAGES - 1],
    pub height: usize,
    pub width: usize,
    pub branches: Branches,
    pub norm: NormKind,
    pub base_extent: usize,
    pub ffn_expansion: usize,
}

impl NetworkConfig {
    /// Channel plan `{32, 64, 128, 256, 512}` with `{1, 2, 2, 4}` blocks.
    pub fn standard(in_channels: usize, num_classes: usize, height: usize, width: usize) -> Self {
        Self {
            in_channels,
            num_classes,
            stage_channels: [32, 64, 128, 256, 512],
            mewb_counts: [1, 2, 2, 4],
            height,
            width,
            branches: Branches::ALL,
            norm: NormKind::Group,
            base_extent: 16,
            ffn_expansion: 4,
        }
    }

    /// Small plan `{8, 16, 32, 64, 128}` with one block per stage.
    pub fn toy(in_channels: usize, num_classes: usize, height: usize, width: usize) -> Self {
        Self {
            stage_channels: [8, 16, 32, 64, 128],
            mewb_counts: [1, 1, 1, 1],
            ..Self::standard(in_channels, num_classes, height, width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(DOWNSAMPLE)
            || !self.width.is_multiple_of(DOWNSAMPLE)
        {
            return Err(MewError::InvalidArgument(format!(
                "input extent {}x{} must be positive multiples of {DOWNSAMPLE}",
                self.height, self.width
            )));
        }
        if self.in_channels == 0 || self.num_classes < 2 {
            return Err(MewError::InvalidArgument(format!(
                "need in_channels >= 1 and num_classes >= 2, got {} and {}",
                self.in_channels, self.num_classes
            )));
        }
        if let Some(&c) = self.stage_channels.iter().find(|&&c| c == 0 || c % 4 != 0) {
            return Err(MewError::Indivisible {
                op: "stage_channels",
                channels: c,
                parts: 4,
            });
        }
        Ok(())
    }

    fn mew_config(&self, stage: usize) -> MewConfig {
        let scale = 1 << stage;
        MewConfig {
            channels: self.stage_channels[stage],
            height: self.height / scale,
            width: self.width / scale,
            branches: self.branches,
            norm: self.norm,
            base_extent: self.base_extent,
            ffn_expansion: self.ffn_expansion,
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("in_channels", self.in_channels);
        kv.set("num_classes", self.num_classes);
        kv.set("stage_channels", join(&self.stage_channels));
        kv.set("mewb_counts", join(&self.mewb_counts));
        kv.set("height", self.height);
        kv.set("width", self.width);
        kv.set("branches", self.branches);
        kv.set("norm", self.norm);
        kv.set("base_extent", self.base_extent);
        kv.set("ffn_expansion", self.ffn_expansion);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let fixed = |key: &str, n: usize| -> Result<Vec<usize>> {
            let v: Vec<usize> = kv
                .get_list(key)?
                .ok_or_else(|| MewError::Config(format!("missing key `{key}`")))?;
            if v.len() != n {
                return Err(MewError::Config(format!("`{key}` needs {n} entries, got {}", v.len())));
            }
            Ok(v)
        };
        let sc = fixed("stage_channels", STAGES)?;
        let mc = fixed("mewb_counts", STAGES - 1)?;
        let cfg = Self {
            in_channels: kv.require("in_channels")?,
            num_classes: kv.require("num_classes")?,
            stage_channels: sc.try_into().unwrap(),
            mewb_counts: mc.try_into().unwrap(),
            height: kv.require("height")?,
            width: kv.require("width")?,
            branches: Branches::parse(kv.get("branches").unwrap_or("hw,cw,ch,dw"))?,
            norm: kv.get_parsed("norm")?.unwrap_or_default(),
            base_extent: kv.get_parsed("base_extent")?.unwrap_or(16),
            ffn_expansion: kv.get_parsed("ffn_expansion")?.unwrap_or(4),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
struct StageConv {
    sep: SeparableConv,
    norm: Norm,
}

impl StageConv {
    fn new(
        b: &mut Builder,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        norm: NormKind,
    ) -> Result<Self> {
        Ok(Self {
            sep: SeparableConv::new(b, name, cin, cout, stride),
            norm: Norm::new(b, &format!("{name}.norm"), norm, cout)?,
        })
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.sep.forward(s, x)?;
        let y = self.norm.forward(s, y)?;
        Ok(s.graph.gelu(y))
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: StageConv,
    blocks: Vec<Mewb>,
}

/// Encoder outputs kept for the skip connections, shallow to deep.
#[derive(Clone, Debug)]
pub struct StageState {
    pub encoder: Vec<Var>,
}

/// A built network: configuration, layer wiring, and parameters.
#[derive(Clone, Debug)]
pub struct MewUnet {
    pub cfg: NetworkConfig,
    pub params: ParamStore,
    encoder: Vec<Stage>,
    /// Deepest first: decoder levels 4, 3, 2, 1.
    decoder: Vec<Stage>,
    head: Pointwise,
}

impl MewUnet {
    /// Builds and initializes a network. Identical `(cfg, seed)` pairs give
    /// bitwise-identical parameters.
    pub fn build(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder::new(&mut params, seed);
        let ch = cfg.stage_channels;
        let mut encoder = Vec::with_capacity(STAGES);
        encoder.push(Stage {
            conv: StageConv::new(&mut b, "enc1", cfg.in_channels, ch[0], 1, cfg.norm)?,
            blocks: Vec::new(),
        });
        for s in 1..STAGES {
            let mcfg = cfg.mew_config(s);
            let conv = StageConv::new(&mut b, &format!("enc{}", s + 1), ch[s - 1], ch[s], 2, cfg.norm)?;
            let blocks = (0..cfg.mewb_counts[s - 1])
                .map(|i| Mewb::new(&mut b, &format!("enc{}.mewb{i}", s + 1), &mcfg))
                .collect::<Result<_>>()?;
            encoder.push(Stage { conv, blocks });
        }
        let mut decoder = Vec::with_capacity(STAGES - 1);
        for level in (0..STAGES - 1).rev() {
            let conv = StageConv::new(
                &mut b,
                &format!("dec{}", level + 1),
                ch[level + 1],
                ch[level],
                1,
                cfg.norm,
            )?;
            let blocks = if level == 0 {
                Vec::new()
            } else {
                let mcfg = cfg.mew_config(level);
                (0..cfg.mewb_counts[level - 1])
                    .map(|i| Mewb::new(&mut b, &format!("dec{}.mewb{i}", level + 1), &mcfg))
                    .collect::<Result<_>>()?
            };
            decoder.push(Stage { conv, blocks });
        }
        let head = Pointwise::new(&mut b, "head", ch[0], cfg.num_classes);
        Ok(Self {
            cfg: cfg.clone(),
            params,
            encoder,
            decoder,
            head,
        })
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Logits of shape `(batch, num_classes, H, W)`.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        Ok(self.forward_with_stages(s, x)?.0)
    }

    pub fn forward_with_stages(&self, s: &mut Session, x: Var) -> Result<(Var, StageState)> {
        let [_, c, h, w] = s.graph.value(x).dims4("mew_unet")?;
        if (c, h, w) != (self.cfg.in_channels, self.cfg.height, self.cfg.width) {
            return Err(MewError::ShapeMismatch {
                op: "mew_unet input",
                lhs: vec![self.cfg.in_channels, self.cfg.height, self.cfg.width],
                rhs: vec![c, h, w],
            });
        }
        let mut skips = Vec::with_capacity(STAGES);
        let mut y = x;
        for stage in &self.encoder {
            y = stage.conv.forward(s, y)?;
            for blk in &stage.blocks {
                y = blk.forward(s, y)?;
            }
            skips.push(y);
        }
        for (stage, skip) in self.decoder.iter().zip(skips[..STAGES - 1].iter().rev()) {
            let [_, _, sh, sw] = s.graph.value(*skip).dims4("skip")?;
            y = s.graph.bilinear_interpolate(y, sh, sw)?;
            y = stage.conv.forward(s, y)?;
            y = s.graph.add(y, *skip)?;
            for blk in &stage.blocks {
                y = blk.forward(s, y)?;
            }
        }
        let logits = self.head.forward(s, y)?;
        Ok((logits, StageState { encoder: skips }))
    }

    /// Inference on a plain tensor.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&self.params, false);
        let xv = s.graph.constant(x.clone());
        let out = self.forward(&mut s, xv)?;
        Ok(s.graph.value(out).clone())
    }
}
