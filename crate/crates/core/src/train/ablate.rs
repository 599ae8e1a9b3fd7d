//! Branch and normalization sweep on a fixed synthetic dataset.
//!
//! Each variant is trained once per seed on the same train/test partition
//! and scored on the test part with its final weights. Rows report the
//! per-seed scores and their medians.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, ModelSize, Trainer, TrainConfig};
use crate::data::{derive_seed, synth_samples, Dataset, SynthConfig};
use crate::error::{invalid, Result};
use crate::mew::Branches;
use crate::nn::NormKind;

/// `(name, branches, norm)` in table order.
pub const ABLATION_VARIANTS: [(&str, &str, NormKind); 6] = [
    ("dw/bn", "dw", NormKind::Batch),
    ("dw", "dw", NormKind::Group),
    ("dw+hw", "hw,dw", NormKind::Group),
    ("dw+hw+cw", "hw,cw,dw", NormKind::Group),
    ("hw+cw+ch", "hw,cw,ch", NormKind::Group),
    ("all", "hw,cw,ch,dw", NormKind::Group),
];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub samples: usize,
    pub train: usize,
    pub extent: usize,
    pub channels: usize,
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    /// Optimizer, schedule, epochs, batch size, and model size. Branches,
    /// norm, seed, and class count are set per run.
    pub base: TrainConfig,
}

impl AblationConfig {
    /// 64 synthetic 32×32 three-channel images split 48/16, toy network,
    /// 30 epochs of AdamW at 1e-3 with augmentation, seeds 0, 1, 2.
    pub fn standard() -> Self {
        Self {
            samples: 64,
            train: 48,
            extent: 32,
            channels: 3,
            data_seed: 7,
            seeds: vec![0, 1, 2],
            base: TrainConfig {
                epochs: 30,
                lr: 1e-3,
                model: ModelSize::Toy,
                augment: true,
                ..TrainConfig::isic()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.train >= self.samples || self.seeds.is_empty() {
            return Err(invalid(format!(
                "ablation needs 0 < train < samples and at least one seed, got {}/{} with {} seeds",
                self.train,
                self.samples,
                self.seeds.len()
            )));
        }
        self.base.validate()
    }

    /// Deterministic `(train, test)` partition of the synthetic set.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let samples = synth_samples(&SynthConfig {
            count: self.samples,
            extent: self.extent,
            num_classes: 2,
            channels: self.channels,
            seed: self.data_seed,
        })?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.data_seed, 1)));
        let pick = |idx: &[usize]| {
            let mut idx = idx.to_vec();
            idx.sort_unstable();
            Dataset::new(idx.iter().map(|&i| samples[i].clone()).collect())
        };
        Ok((pick(&order[..self.train])?, pick(&order[self.train..])?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub branches: Branches,
    pub norm: NormKind,
    pub miou: Vec<f64>,
    pub dsc: Vec<f64>,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

impl AblationRow {
    pub fn median_miou(&self) -> f64 {
        median(&self.miou)
    }

    pub fn median_dsc(&self) -> f64 {
        median(&self.dsc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Tab-separated comparison table.
    pub fn to_tsv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| format!("miou_s{s}")).collect();
        let mut out = format!(
            "variant\tbranches\tnorm\t{}\tmedian_miou\tmedian_dsc\n",
            seeds.join("\t")
        );
        for r in &self.rows {
            let per: Vec<String> = r.miou.iter().map(|v| format!("{v:.4}")).collect();
            out += &format!(
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\n",
                r.name,
                r.branches,
                r.norm,
                per.join("\t"),
                r.median_miou(),
                r.median_dsc()
            );
        }
        out
    }
}

/// Trains every variant for every seed. `progress` receives one line per
/// finished run.
pub fn ablate(cfg: &AblationConfig, mut progress: impl FnMut(&str)) -> Result<AblationReport> {
    cfg.validate()?;
    let (train, test) = cfg.datasets()?;
    let [c, h, w] = train.extent();
    let mut rows = Vec::new();
    for (name, branches, norm) in ABLATION_VARIANTS {
        let branches = Branches::parse(branches)?;
        let mut row = AblationRow {
            name: name.to_string(),
            branches,
            norm,
            miou: Vec::new(),
            dsc: Vec::new(),
        };
        for &seed in &cfg.seeds {
            let run_cfg = TrainConfig {
                branches,
                norm,
                seed,
                num_classes: 2,
                ..cfg.base.clone()
            };
            let mut t = Trainer::new(&run_cfg, c, h, w)?;
            let mut last = 0.0;
            while t.epoch < run_cfg.epochs {
                last = t.train_epoch(&train)?.0;
            }
            let r = evaluate(&t.net, &test, run_cfg.batch_size, run_cfg.spacing, None)?;
            progress(&format!(
                "{name}\tseed={seed}\tloss={last:.4}\tmiou={:.4}\tdsc={:.4}",
                r.mean.miou, r.mean.dsc
            ));
            row.miou.push(r.mean.miou);
            row.dsc.push(r.mean.dsc);
        }
        rows.push(row);
    }
    Ok(AblationReport {
        seeds: cfg.seeds.clone(),
        rows,
    })
}
