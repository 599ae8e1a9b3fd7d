//! Loss, optimizers, training and evaluation loops, and ablation sweeps.
//!
//! Every source of randomness derives from the configured seed: network
//! initialization uses it directly, and epoch `e` shuffles with
//! `derive_seed(seed, e)` and augments with `derive_seed(seed ^ AUGMENT_SALT, e)`.
//! Runs are therefore reproducible bit for bit.

pub mod ablate;
mod config;
mod loss;
mod optim;

pub use ablate::{ablate, AblationConfig, AblationReport, AblationRow, ABLATION_VARIANTS};
pub use config::{ModelSize, TrainConfig, CONFIG_KEYS};
pub use loss::{bce_dice_loss, bce_dice_value, softmax_classes, LossParts, LossWeights, DICE_SMOOTH};
pub use optim::{
    adamw_step, clip_grad_norm, cosine_lr, sgd_step, AdamWParams, Optimizer, OptimizerKind, OptimizerSpec,
    SgdParams,
};

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::data::{derive_seed, save_pgm, Dataset, Manifest, PgmImage};
use crate::error::{MewError, Result};
use crate::kv::KeyValues;
use crate::metrics::{Evaluator, MetricsReport, SegmentationMask};
use crate::tensor::{Session, Tensor};
use crate::unet::{Checkpoint, MewUnet};

const AUGMENT_SALT: u64 = 0xa5a5_5a5a_0f0f_f0f0;

pub const LOG_HEADER: &str = "epoch\tloss\tlr\tval_dsc\tval_miou";

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_dsc: f64,
    pub val_miou: f64,
}

impl EpochRecord {
    /// Tab-separated; floats in shortest round-trip form.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.epoch, self.loss, self.lr, self.val_dsc, self.val_miou
        )
    }
}

/// Result of [`Trainer::run`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: Checkpoint,
}

/// Network, optimizer state, and position in the schedule.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: MewUnet,
    pub optim: Optimizer,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, in_channels: usize, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        let net = MewUnet::build(&cfg.network(in_channels, height, width), cfg.seed)?;
        let optim = Optimizer::new(cfg.optimizer_spec(), &net.params);
        Ok(Self {
            cfg: cfg.clone(),
            net,
            optim,
            epoch: 0,
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(cfg: &TrainConfig, ck: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let net = ck.restore()?;
        let mut optim = Optimizer::new(cfg.optimizer_spec(), &net.params);
        let step = ck.meta.get_parsed("optim_step")?.unwrap_or(0);
        optim.load_state(&net.params, step, |n| ck.tensor(n).cloned())?;
        Ok(Self {
            cfg: cfg.clone(),
            net,
            optim,
            epoch: ck.meta.get_parsed("epoch")?.unwrap_or(0),
        })
    }

    /// Parameters, optimizer state, epoch, and seed.
    pub fn checkpoint(&self, extra: &[(&str, String)]) -> Checkpoint {
        let mut meta = KeyValues::new();
        meta.set("epoch", self.epoch);
        meta.set("seed", self.cfg.seed);
        meta.set("optim_step", self.optim.step);
        meta.set("optimizer", self.optim.spec.kind());
        for (k, v) in extra {
            meta.set(k, v);
        }
        let mut ck = Checkpoint::from_network(&self.net, meta);
        ck.tensors.extend(self.optim.state_tensors(&self.net.params));
        ck
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.cfg.epochs, self.cfg.lr, self.cfg.lr_min)
    }

    /// One optimizer step on `(images, masks)`; returns the loss.
    pub fn step(&mut self, images: &Tensor, masks: &SegmentationMask, lr: f64) -> Result<f64> {
        let (value, grads, updates) = {
            let mut s = Session::new(&self.net.params, true);
            let x = s.graph.constant(images.clone());
            let logits = self.net.forward(&mut s, x)?;
            let loss = bce_dice_loss(&mut s.graph, logits, masks, self.cfg.loss)?;
            let value = s.graph.value(loss).data()[0];
            let grads = s.backward(loss)?;
            (value, grads, s.take_buffer_updates())
        };
        let params = &mut self.net.params;
        params.zero_grad();
        params.accumulate_grads(grads);
        params.apply_buffer_updates(updates);
        if let Some(c) = self.cfg.clip_grad {
            clip_grad_norm(params, c);
        }
        self.optim.apply(params, lr);
        Ok(value)
    }

    /// Trains one epoch; returns `(mean loss, lr)`.
    pub fn train_epoch(&mut self, train: &Dataset) -> Result<(f64, f64)> {
        let e = self.epoch as u64;
        let lr = self.lr_at(self.epoch);
        let shuffle = derive_seed(self.cfg.seed, e);
        let aug = self.cfg.augment.then(|| derive_seed(self.cfg.seed ^ AUGMENT_SALT, e));
        let (mut total, mut count) = (0.0, 0usize);
        for batch in train.batches(self.cfg.batch_size, Some(shuffle), aug) {
            let n = batch.ids.len();
            total += self.step(&batch.images, &batch.masks, lr)? * n as f64;
            count += n;
        }
        self.epoch += 1;
        Ok((total / count as f64, lr))
    }

    /// Trains the remaining epochs, validating after each. `on_epoch` sees
    /// every record as it is produced.
    pub fn run(
        &mut self,
        train: &Dataset,
        val: &Dataset,
        mut on_epoch: impl FnMut(&EpochRecord, &Trainer) -> Result<()>,
    ) -> Result<TrainOutcome> {
        let mut log = Vec::new();
        let mut best: Option<(f64, usize, Checkpoint)> = None;
        while self.epoch < self.cfg.epochs {
            let (loss, lr) = self.train_epoch(train)?;
            let report = evaluate(&self.net, val, self.cfg.batch_size, self.cfg.spacing, None)?;
            let rec = EpochRecord {
                epoch: self.epoch,
                loss,
                lr,
                val_dsc: report.mean.dsc,
                val_miou: report.mean.miou,
            };
            if best.as_ref().is_none_or(|(d, _, _)| rec.val_dsc > *d) {
                let ck = self.checkpoint(&[("val_dsc", rec.val_dsc.to_string())]);
                best = Some((rec.val_dsc, rec.epoch, ck));
            }
            on_epoch(&rec, self)?;
            log.push(rec);
        }
        let (_, best_epoch, best) = match best {
            Some(b) => b,
            None => (0.0, self.epoch, self.checkpoint(&[])),
        };
        Ok(TrainOutcome { log, best_epoch, best })
    }
}

/// Loads both splits named in `cfg`, failing before any training when the
/// manifest or a split is missing.
pub fn load_datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| MewError::Dataset("no manifest configured".into()))?;
    let m = Manifest::load(path)?;
    let load = |split| {
        m.load_split(split, cfg.num_classes)
            .map_err(|e| MewError::Dataset(format!("split `{split}`: {e}")))
    };
    Ok((load(cfg.train_split)?, load(cfg.val_split)?))
}

/// Full training run writing `train.log`, `config.txt`, `best.ckpt`, and
/// `last.ckpt` under `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, |_| {})
}

/// [`train`] with a callback for each epoch record.
pub fn train_with(cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_ds, val_ds) = load_datasets(cfg)?;
    let [c, h, w] = train_ds.extent();
    if val_ds.extent() != [c, h, w] {
        return Err(MewError::Dataset(format!(
            "train extent {:?} differs from val extent {:?}",
            train_ds.extent(),
            val_ds.extent()
        )));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.txt"), cfg.to_kv().to_text())?;
    let mut log = File::create(cfg.out_dir.join("train.log"))?;
    writeln!(log, "{LOG_HEADER}")?;
    let mut trainer = Trainer::new(cfg, c, h, w)?;
    let out = trainer.run(&train_ds, &val_ds, |rec, _| {
        writeln!(log, "{}", rec.to_line())?;
        log.flush()?;
        on_epoch(rec);
        Ok(())
    })?;
    out.best.save(cfg.out_dir.join("best.ckpt"))?;
    trainer.checkpoint(&[]).save(cfg.out_dir.join("last.ckpt"))?;
    Ok(out)
}

/// Argmax predictions for every sample, in dataset order.
pub fn predict_masks(net: &MewUnet, ds: &Dataset, batch_size: usize) -> Result<Vec<SegmentationMask>> {
    let mut out = Vec::with_capacity(ds.len());
    for batch in ds.batches(batch_size, None, None) {
        let pred = SegmentationMask::argmax(&net.predict(&batch.images)?)?;
        for n in 0..pred.batch() {
            out.push(SegmentationMask::new(1, pred.height(), pred.width(), pred.image(n).to_vec())?);
        }
    }
    Ok(out)
}

/// Metrics of `predictions` against the dataset masks. With `export`,
/// writes `<id>_pred.pgm` label maps there.
pub fn score(
    ds: &Dataset,
    predictions: &[SegmentationMask],
    num_classes: usize,
    spacing: (f64, f64),
    export: Option<&Path>,
) -> Result<MetricsReport> {
    if predictions.len() != ds.len() {
        return Err(MewError::InvalidArgument(format!(
            "{} predictions for {} samples",
            predictions.len(),
            ds.len()
        )));
    }
    if let Some(dir) = export {
        std::fs::create_dir_all(dir)?;
    }
    let mut ev = Evaluator::new(num_classes, spacing)?;
    for (s, p) in ds.samples().iter().zip(predictions) {
        ev.add(p, &s.mask)?;
        if let Some(dir) = export {
            let img = PgmImage::new(p.width(), p.height(), 255, p.labels().to_vec())?;
            save_pgm(&img, dir.join(format!("{}_pred.pgm", s.id)))?;
        }
    }
    Ok(ev.report())
}

/// Runs `net` on `ds` and scores the argmax masks.
pub fn evaluate(
    net: &MewUnet,
    ds: &Dataset,
    batch_size: usize,
    spacing: (f64, f64),
    export: Option<&Path>,
) -> Result<MetricsReport> {
    let preds = predict_masks(net, ds, batch_size)?;
    score(ds, &preds, net.cfg.num_classes, spacing, export)
}

/// Checks that `ds` fits the network in `ck`.
pub fn check_compatible(ck: &Checkpoint, ds: &Dataset) -> Result<()> {
    let cfg = &ck.config;
    let [c, h, w] = ds.extent();
    if (c, h, w) != (cfg.in_channels, cfg.height, cfg.width) {
        return Err(MewError::ShapeMismatch {
            op: "evaluate",
            lhs: vec![cfg.in_channels, cfg.height, cfg.width],
            rhs: vec![c, h, w],
        });
    }
    let top = ds.samples().iter().map(|s| s.mask.max_label()).max().unwrap_or(0) as usize;
    if top >= cfg.num_classes {
        return Err(MewError::LabelOutOfRange {
            label: top,
            classes: cfg.num_classes,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_samples, SynthConfig};

    fn tiny_setup(epochs: usize) -> (TrainConfig, Dataset) {
        let ds = Dataset::new(
            synth_samples(&SynthConfig {
                count: 3,
                extent: 16,
                num_classes: 2,
                channels: 1,
                seed: 5,
            })
            .unwrap(),
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs,
            batch_size: 2,
            model: ModelSize::Toy,
            seed: 3,
            ..TrainConfig::isic()
        };
        (cfg, ds)
    }

    #[test]
    fn one_epoch_one_record_and_repeatable() {
        let (cfg, ds) = tiny_setup(1);
        let run = || {
            let mut t = Trainer::new(&cfg, 1, 16, 16).unwrap();
            t.run(&ds, &ds, |_, _| Ok(())).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log.len(), 1);
        assert_eq!(a.log, b.log);
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
        assert!(a.log[0].loss.is_finite() && a.log[0].loss >= 0.0);
        assert_eq!(a.log[0].lr, cfg.lr);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (cfg, ds) = tiny_setup(3);
        let mut full = Trainer::new(&cfg, 1, 16, 16).unwrap();
        let full_log = full.run(&ds, &ds, |_, _| Ok(())).unwrap().log;

        let mut first = Trainer::new(&cfg, 1, 16, 16).unwrap();
        first.train_epoch(&ds).unwrap();
        let ck = Checkpoint::from_bytes(&first.checkpoint(&[]).to_bytes()).unwrap();
        let mut second = Trainer::resume(&cfg, &ck).unwrap();
        let rest = second.run(&ds, &ds, |_, _| Ok(())).unwrap().log;
        assert_eq!(&full_log[1..], &rest[..]);
    }

    #[test]
    fn zero_gradient_step_is_noop_without_decay() {
        let (mut cfg, _) = tiny_setup(1);
        cfg.weight_decay = Some(0.0);
        let mut t = Trainer::new(&cfg, 1, 16, 16).unwrap();
        let before: Vec<Tensor> = t.net.params.iter().map(|(_, p)| p.value.clone()).collect();
        t.net.params.zero_grad();
        t.optim.apply(&mut t.net.params, 0.1);
        let after: Vec<Tensor> = t.net.params.iter().map(|(_, p)| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn oracle_predictions_score_perfectly() {
        let (_, ds) = tiny_setup(1);
        let gt: Vec<SegmentationMask> = ds.samples().iter().map(|s| s.mask.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        let r = score(&ds, &gt, 2, (1.0, 1.0), Some(dir.path())).unwrap();
        assert_eq!(r.mean.dsc, 1.0);
        assert_eq!(r.mean.hd95, Some(0.0));
        assert!(dir.path().join("synth0000_pred.pgm").exists());
    }

    #[test]
    fn missing_manifest_fails_early() {
        let cfg = TrainConfig {
            manifest: Some("/nonexistent/m.tsv".into()),
            ..TrainConfig::isic()
        };
        assert!(matches!(train(&cfg), Err(MewError::Dataset(_))));
    }
}
