//! Training configuration: a flat `key=value` file plus overrides.

use std::path::PathBuf;

use crate::data::Split;
use crate::error::{MewError, Result};
use crate::kv::KeyValues;
use crate::mew::Branches;
use crate::nn::NormKind;
use crate::unet::NetworkConfig;

use super::loss::LossWeights;
use super::optim::{AdamWParams, OptimizerKind, OptimizerSpec, SgdParams};

/// Channel plan of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ModelSize {
    /// `{32, 64, 128, 256, 512}`, blocks `{1, 2, 2, 4}`.
    #[default]
    Standard,
    /// `{8, 16, 32, 64, 128}`, one block per stage.
    Toy,
}

impl std::fmt::Display for ModelSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelSize::Standard => "standard",
            ModelSize::Toy => "toy",
        })
    }
}

impl std::str::FromStr for ModelSize {
    type Err = MewError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ModelSize::Standard),
            "toy" => Ok(ModelSize::Toy),
            _ => Err(MewError::Config(format!("unknown model `{s}` (standard|toy)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    /// `None` picks the optimizer's default (1e-2 AdamW, 1e-4 SGD).
    pub weight_decay: Option<f64>,
    pub momentum: f64,
    pub batch_size: usize,
    pub loss: LossWeights,
    pub seed: u64,
    pub branches: Branches,
    pub norm: NormKind,
    pub num_classes: usize,
    pub model: ModelSize,
    pub augment: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_grad: Option<f64>,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub train_split: Split,
    pub val_split: Split,
    /// HD95 pixel spacing `(row, col)`.
    pub spacing: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::isic()
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "augment",
    "batch_size",
    "branches",
    "clip_grad",
    "epochs",
    "loss_ce",
    "loss_dice",
    "lr",
    "lr_min",
    "manifest",
    "model",
    "momentum",
    "norm",
    "num_classes",
    "optimizer",
    "out_dir",
    "preset",
    "seed",
    "spacing",
    "train_split",
    "val_split",
    "weight_decay",
];

impl TrainConfig {
    /// Binary skin-lesion protocol: AdamW, lr 1e-3, 300 epochs, batch 8.
    pub fn isic() -> Self {
        Self {
            lr: 1e-3,
            lr_min: 0.0,
            epochs: 300,
            optimizer: OptimizerKind::AdamW,
            weight_decay: None,
            momentum: 0.9,
            batch_size: 8,
            loss: LossWeights::default(),
            seed: 0,
            branches: Branches::ALL,
            norm: NormKind::Group,
            num_classes: 2,
            model: ModelSize::Standard,
            augment: true,
            clip_grad: None,
            manifest: None,
            out_dir: PathBuf::from("runs/mew"),
            train_split: Split::Train,
            val_split: Split::Test,
            spacing: (1.0, 1.0),
        }
    }

    /// Multi-organ protocol: SGD, lr 3e-3, 600 epochs, batch 8, nine classes.
    pub fn synapse() -> Self {
        Self {
            lr: 3e-3,
            epochs: 600,
            optimizer: OptimizerKind::Sgd,
            num_classes: 9,
            ..Self::isic()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "isic" => Ok(Self::isic()),
            "synapse" => Ok(Self::synapse()),
            _ => Err(MewError::Config(format!("unknown preset `{name}` (isic|synapse)"))),
        }
    }

    /// Builds from `kv`, starting at the preset named by `preset` (default
    /// `isic`). Unknown keys are errors.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::preset(kv.get("preset").unwrap_or("isic"))?;
        cfg.apply(kv)?;
        Ok(cfg)
    }

    /// Overwrites every field named in `kv`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(k) = kv.keys().find(|k| !CONFIG_KEYS.contains(k)) {
            return Err(MewError::Config(format!("unknown key `{k}`")));
        }
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = kv.get_parsed($key)? {
                    $field = v;
                }
            };
        }
        set!(self.lr, "lr");
        set!(self.lr_min, "lr_min");
        set!(self.epochs, "epochs");
        set!(self.optimizer, "optimizer");
        set!(self.momentum, "momentum");
        set!(self.batch_size, "batch_size");
        set!(self.loss.ce, "loss_ce");
        set!(self.loss.dice, "loss_dice");
        set!(self.seed, "seed");
        set!(self.norm, "norm");
        set!(self.num_classes, "num_classes");
        set!(self.model, "model");
        set!(self.augment, "augment");
        set!(self.train_split, "train_split");
        set!(self.val_split, "val_split");
        if let Some(v) = kv.get("branches") {
            self.branches = Branches::parse(v)?;
        }
        if let Some(v) = kv.get_parsed::<f64>("weight_decay")? {
            self.weight_decay = Some(v);
        }
        if let Some(v) = kv.get_parsed::<f64>("clip_grad")? {
            self.clip_grad = (v > 0.0).then_some(v);
        }
        if let Some(v) = kv.get("manifest") {
            self.manifest = Some(PathBuf::from(v));
        }
        if let Some(v) = kv.get("out_dir") {
            self.out_dir = PathBuf::from(v);
        }
        if let Some(v) = kv.get_list::<f64>("spacing")? {
            let [y, x] = v[..] else {
                return Err(MewError::Config("`spacing` needs two values".into()));
            };
            self.spacing = (y, x);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MewError::Config(m));
        // Written so that NaN fails.
        let lr_ok = self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr;
        if !lr_ok {
            return bad(format!("need 0 <= lr_min <= lr and lr > 0, got {} and {}", self.lr_min, self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if !(self.spacing.0 > 0.0 && self.spacing.1 > 0.0) {
            return bad("spacing must be positive".into());
        }
        self.loss.validate().map_err(|e| MewError::Config(e.to_string()))
    }

    pub fn optimizer_spec(&self) -> OptimizerSpec {
        match self.optimizer {
            OptimizerKind::AdamW => OptimizerSpec::AdamW(AdamWParams {
                weight_decay: self.weight_decay.unwrap_or(AdamWParams::default().weight_decay),
                ..AdamWParams::default()
            }),
            OptimizerKind::Sgd => OptimizerSpec::Sgd(SgdParams {
                momentum: self.momentum,
                weight_decay: self.weight_decay.unwrap_or(SgdParams::default().weight_decay),
            }),
        }
    }

    /// Network for inputs of `in_channels × height × width`.
    pub fn network(&self, in_channels: usize, height: usize, width: usize) -> NetworkConfig {
        let base = match self.model {
            ModelSize::Standard => NetworkConfig::standard(in_channels, self.num_classes, height, width),
            ModelSize::Toy => NetworkConfig::toy(in_channels, self.num_classes, height, width),
        };
        NetworkConfig {
            branches: self.branches,
            norm: self.norm,
            ..base
        }
    }

    /// Canonical text; parsing it back yields an equal config.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("lr", self.lr);
        kv.set("lr_min", self.lr_min);
        kv.set("epochs", self.epochs);
        kv.set("optimizer", self.optimizer);
        if let Some(wd) = self.weight_decay {
            kv.set("weight_decay", wd);
        }
        kv.set("momentum", self.momentum);
        kv.set("batch_size", self.batch_size);
        kv.set("loss_ce", self.loss.ce);
        kv.set("loss_dice", self.loss.dice);
        kv.set("seed", self.seed);
        kv.set("branches", self.branches);
        kv.set("norm", self.norm);
        kv.set("num_classes", self.num_classes);
        kv.set("model", self.model);
        kv.set("augment", self.augment);
        kv.set("clip_grad", self.clip_grad.unwrap_or(0.0));
        if let Some(m) = &self.manifest {
            kv.set("manifest", m.display());
        }
        kv.set("out_dir", self.out_dir.display());
        kv.set("train_split", self.train_split);
        kv.set("val_split", self.val_split);
        kv.set("spacing", format!("{},{}", self.spacing.0, self.spacing.1));
        kv
    }
}
