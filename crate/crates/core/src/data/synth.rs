//! Seeded synthetic segmentation data: anti-aliased ellipses and rotated
//! rectangles over a smooth textured background.
//!
//! Mask labels are exact: a pixel belongs to a shape when its centre lies
//! inside it, later shapes overwriting earlier ones. Image intensities use
//! 4×4 supersampled coverage and are quantized to 8 bits so that a PGM
//! round trip is lossless.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pgm::{save_pgm, PgmImage};
use super::{derive_seed, Entry, Manifest, Sample, Split};
use crate::error::{invalid, Result};
use crate::metrics::SegmentationMask;
use crate::tensor::Tensor;

pub const MIN_FOREGROUND: f64 = 0.05;
pub const MAX_FOREGROUND: f64 = 0.6;
pub const TRAIN_FRACTION: f64 = 0.7;
const SUPERSAMPLE: usize = 4;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub extent: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.extent == 0 || !self.extent.is_multiple_of(16) {
            return Err(invalid(format!(
                "synthetic data needs count >= 1 and extent a positive multiple of 16, got {} and {}",
                self.count, self.extent
            )));
        }
        if self.num_classes < 2 || self.num_classes > 256 || self.channels == 0 {
            return Err(invalid(format!(
                "num_classes must be in 2..=256 and channels >= 1, got {} and {}",
                self.num_classes, self.channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Ellipse,
    Rect,
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    kind: Kind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    class: u16,
    tone: f64,
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (dx * self.cos + dy * self.sin) / self.rx;
        let v = (-dx * self.sin + dy * self.cos) / self.ry;
        match self.kind {
            Kind::Ellipse => u * u + v * v <= 1.0,
            Kind::Rect => u.abs() <= 1.0 && v.abs() <= 1.0,
        }
    }
}

fn draw_shapes(rng: &mut ChaCha8Rng, extent: f64, num_classes: usize) -> Vec<Shape> {
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let class = rng.random_range(1..num_classes) as u16;
            Shape {
                kind: if rng.random_bool(0.5) { Kind::Ellipse } else { Kind::Rect },
                cy: rng.random_range(0.2..0.8) * extent,
                cx: rng.random_range(0.2..0.8) * extent,
                ry: rng.random_range(0.08..0.3) * extent,
                rx: rng.random_range(0.08..0.3) * extent,
                cos: theta.cos(),
                sin: theta.sin(),
                class,
                tone: rng.random_range(-0.08..0.08),
            }
        })
        .collect()
}

fn label_map(shapes: &[Shape], e: usize) -> Vec<u16> {
    let mut labels = vec![0u16; e * e];
    for r in 0..e {
        for c in 0..e {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            for s in shapes {
                if s.contains(y, x) {
                    labels[r * e + c] = s.class;
                }
            }
        }
    }
    labels
}

/// Mean foreground intensity for `class` in channel `ch`.
fn class_tone(class: u16, num_classes: usize, ch: usize) -> f64 {
    let t = if num_classes > 2 {
        (class as f64 - 1.0) / (num_classes as f64 - 2.0)
    } else {
        0.5
    };
    let tint = [0.0, 0.06, -0.06][ch % 3];
    0.6 + 0.3 * t + tint
}

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u16
}

/// One sample as 8-bit planes plus labels.
fn render(cfg: &SynthConfig, index: usize) -> (Vec<Vec<u16>>, Vec<u16>) {
    let e = cfg.extent;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let (shapes, labels) = (0..MAX_ATTEMPTS)
        .find_map(|_| {
            let shapes = draw_shapes(&mut rng, e as f64, cfg.num_classes);
            let labels = label_map(&shapes, e);
            let frac = labels.iter().filter(|&&l| l != 0).count() as f64 / (e * e) as f64;
            (frac > MIN_FOREGROUND && frac < MAX_FOREGROUND).then_some((shapes, labels))
        })
        .expect("shape sampler reaches the foreground band");

    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..3.0) * 2.0 * PI / e as f64,
                rng.random_range(0.5..3.0) * 2.0 * PI / e as f64,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.02..0.06),
            )
        })
        .collect();
    let base = rng.random_range(0.2..0.35);
    let step = 1.0 / SUPERSAMPLE as f64;
    let mut planes = vec![Vec::with_capacity(e * e); cfg.channels];
    for r in 0..e {
        for c in 0..e {
            let texture: f64 = waves
                .iter()
                .map(|&(fy, fx, ph, amp)| amp * (fy * r as f64 + fx * c as f64 + ph).sin())
                .sum();
            let noise = rng.random_range(-0.03..0.03);
            // Coverage of each shape from the supersample grid.
            let mut cover = vec![0.0; shapes.len()];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let y = r as f64 + (sy as f64 + 0.5) * step;
                    let x = c as f64 + (sx as f64 + 0.5) * step;
                    for (k, s) in shapes.iter().enumerate() {
                        if s.contains(y, x) {
                            cover[k] += step * step;
                        }
                    }
                }
            }
            for (ch, plane) in planes.iter_mut().enumerate() {
                let mut v = base + texture + noise;
                for (s, &a) in shapes.iter().zip(&cover) {
                    let fg = class_tone(s.class, cfg.num_classes, ch) + s.tone + 0.5 * texture;
                    v = v * (1.0 - a) + fg * a;
                }
                plane.push(quantize(v));
            }
        }
    }
    (planes, labels)
}

fn to_sample(id: String, e: usize, planes: &[Vec<u16>], labels: Vec<u16>) -> Sample {
    let data = planes.iter().flatten().map(|&v| v as f64 / 255.0).collect();
    Sample {
        id,
        image: Tensor::new(&[planes.len(), e, e], data).expect("consistent extents"),
        mask: SegmentationMask::new(1, e, e, labels).expect("consistent extents"),
    }
}

pub fn sample_id(index: usize) -> String {
    format!("synth{index:04}")
}

/// Seeded 7:3 train/test assignment over `count` ids.
pub fn split_assignment(count: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
    let n_train = (count as f64 * TRAIN_FRACTION).round() as usize;
    let mut split = vec![Split::Test; count];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    split
}

/// In-memory generation; identical to loading what [`synth_generate`]
/// writes for the same config.
pub fn synth_samples(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    Ok((0..cfg.count)
        .map(|i| {
            let (planes, labels) = render(cfg, i);
            to_sample(sample_id(i), cfg.extent, &planes, labels)
        })
        .collect())
}

/// Writes images, masks and `manifest.tsv` under `root`.
pub fn synth_generate(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Manifest> {
    cfg.validate()?;
    let root = root.as_ref();
    std::fs::create_dir_all(root.join("images"))?;
    std::fs::create_dir_all(root.join("masks"))?;
    let splits = split_assignment(cfg.count, cfg.seed);
    let e = cfg.extent;
    let mut entries = Vec::with_capacity(cfg.count);
    for (i, split) in splits.into_iter().enumerate() {
        let id = sample_id(i);
        let (planes, labels) = render(cfg, i);
        let image = if cfg.channels == 1 {
            let rel = format!("images/{id}.pgm");
            save_pgm(&PgmImage::new(e, e, 255, planes[0].clone())?, root.join(&rel))?;
            rel
        } else {
            for (k, p) in planes.iter().enumerate() {
                save_pgm(&PgmImage::new(e, e, 255, p.clone())?, root.join(format!("images/{id}_c{k}.pgm")))?;
            }
            format!("images/{id}")
        };
        let mask = format!("masks/{id}.pgm");
        save_pgm(&PgmImage::new(e, e, 255, labels)?, root.join(&mask))?;
        entries.push(Entry {
            id,
            image,
            mask,
            split,
        });
    }
    let manifest = Manifest {
        root: root.to_path_buf(),
        seed: Some(cfg.seed),
        entries,
    };
    manifest.save(root.join("manifest.tsv"))?;
    Ok(manifest)
}
