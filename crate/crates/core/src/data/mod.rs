//! Image and mask ingestion, synthetic data, augmentation, and batching.
//!
//! A manifest is a text file with one sample per line:
//!
//! ```text
//! # seed=42
//! id<TAB>image<TAB>mask<TAB>split
//! ```
//!
//! Paths are relative to the manifest's directory. An image path ending in
//! `.pgm` is a single greyscale plane; any other value is a stem whose planes
//! live in `<stem>_c0.pgm`, `<stem>_c1.pgm`, and so on. Masks are PGMs whose
//! sample values are class labels.

mod augment;
mod pgm;
mod synth;

pub use augment::{augment, Transform};
pub use pgm::{load_pgm, save_pgm, save_pgm_as, PgmFormat, PgmImage};
pub use synth::{
    sample_id, split_assignment, synth_generate, synth_samples, SynthConfig, MAX_FOREGROUND,
    MIN_FOREGROUND, TRAIN_FRACTION,
};

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MewError, Result};
use crate::metrics::SegmentationMask;
use crate::tensor::Tensor;

/// SplitMix64 finalizer over `(seed, stream)`; used to derive independent
/// generator seeds for samples, epochs, and augmentations.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Image `(C, H, W)` in `[0, 1]` and its single-image mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: SegmentationMask,
}

impl Sample {
    /// `[channels, height, width]`.
    pub fn extent(&self) -> [usize; 3] {
        let s = self.image.shape();
        [s[0], s[1], s[2]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = MewError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(MewError::Dataset(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub seed: Option<u64>,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seed = None;
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if let Some(v) = c.trim().strip_prefix("seed=") {
                    seed = Some(v.parse().map_err(|_| {
                        MewError::Dataset(format!("line {}: bad seed `{v}`", i + 1))
                    })?);
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [id, image, mask, split] = f[..] else {
                return Err(MewError::Dataset(format!(
                    "line {}: expected 4 tab-separated fields, got {}",
                    i + 1,
                    f.len()
                )));
            };
            if !ids.insert(id.to_string()) {
                return Err(MewError::Dataset(format!("line {}: duplicate id `{id}`", i + 1)));
            }
            entries.push(Entry {
                id: id.into(),
                image: image.into(),
                mask: mask.into(),
                split: split.parse()?,
            });
        }
        Ok(Self {
            root: root.into(),
            seed,
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| MewError::Dataset(format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(seed) = self.seed {
            s += &format!("# seed={seed}\n");
        }
        for e in &self.entries {
            s += &format!("{}\t{}\t{}\t{}\n", e.id, e.image, e.mask, e.split);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    fn image_planes(&self, e: &Entry) -> Result<Vec<PgmImage>> {
        if e.image.ends_with(".pgm") {
            return Ok(vec![load_pgm(self.root.join(&e.image))?]);
        }
        let mut planes = Vec::new();
        loop {
            let p = self.root.join(format!("{}_c{}.pgm", e.image, planes.len()));
            if !p.exists() {
                break;
            }
            planes.push(load_pgm(p)?);
        }
        if planes.is_empty() {
            return Err(MewError::Dataset(format!("{}: no image planes for `{}`", e.id, e.image)));
        }
        Ok(planes)
    }

    pub fn load_sample(&self, e: &Entry) -> Result<Sample> {
        let planes = self.image_planes(e)?;
        let mask = load_pgm(self.root.join(&e.mask))?;
        let (w, h) = (mask.width, mask.height);
        if let Some(p) = planes.iter().find(|p| (p.width, p.height) != (w, h)) {
            return Err(MewError::Dataset(format!(
                "{}: image {}x{} vs mask {w}x{h}",
                e.id, p.width, p.height
            )));
        }
        let data = planes
            .iter()
            .flat_map(|p| p.data.iter().map(move |&v| v as f64 / p.maxval as f64))
            .collect();
        Ok(Sample {
            id: e.id.clone(),
            image: Tensor::new(&[planes.len(), h, w], data)?,
            mask: SegmentationMask::new(1, h, w, mask.data)?,
        })
    }

    /// Loads every sample of `split`, checking shared extents and labels.
    pub fn load_split(&self, split: Split, num_classes: usize) -> Result<Dataset> {
        let samples = self
            .split(split)
            .map(|e| self.load_sample(e))
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset::new(samples)?;
        for s in &ds.samples {
            s.mask.check_classes(num_classes).map_err(|err| MewError::Dataset(format!("{}: {err}", s.id)))?;
        }
        Ok(ds)
    }
}

/// Samples sharing one extent.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

/// Stacked images `(B, C, H, W)` and masks `(B, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub images: Tensor,
    pub masks: SegmentationMask,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| MewError::Dataset("empty split".into()))?
            .extent();
        if let Some(s) = samples.iter().find(|s| s.extent() != first) {
            return Err(MewError::Dataset(format!(
                "{}: extent {:?} differs from {first:?}",
                s.id,
                s.extent()
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn extent(&self) -> [usize; 3] {
        self.samples[0].extent()
    }

    /// Sample order for one pass; `None` keeps manifest order.
    pub fn order(&self, shuffle_seed: Option<u64>) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle_seed {
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        idx
    }

    /// Batches in seeded order, the last one possibly short. With
    /// `augment_seed`, sample `i` of the pass is transformed with
    /// `derive_seed(augment_seed, i)`.
    pub fn batches(
        &self,
        batch_size: usize,
        shuffle_seed: Option<u64>,
        augment_seed: Option<u64>,
    ) -> impl Iterator<Item = Batch> + '_ {
        assert!(batch_size > 0, "batch size must be positive");
        let order = self.order(shuffle_seed);
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        let mut pos = 0u64;
        chunks.into_iter().map(move |chunk| {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let s = &self.samples[i];
                    let out = match augment_seed {
                        Some(a) => augment(s, derive_seed(a, pos)),
                        None => s.clone(),
                    };
                    pos += 1;
                    out
                })
                .collect();
            stack(&samples)
        })
    }
}

/// Stacks samples along a new batch axis.
pub fn stack(samples: &[Sample]) -> Batch {
    let [c, h, w] = samples[0].extent();
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        data.extend_from_slice(s.image.data());
    }
    let masks: Vec<&SegmentationMask> = samples.iter().map(|s| &s.mask).collect();
    Batch {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        images: Tensor::new(&[samples.len(), c, h, w], data).expect("uniform extents"),
        masks: SegmentationMask::stack(&masks).expect("uniform extents"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(count: usize, channels: usize, classes: usize) -> SynthConfig {
        SynthConfig {
            count,
            extent: 32,
            num_classes: classes,
            channels,
            seed: 11,
        }
    }

    #[test]
    fn synth_is_deterministic_and_bounded() {
        let c = cfg(12, 1, 3);
        let a = synth_samples(&c).unwrap();
        assert_eq!(a, synth_samples(&c).unwrap());
        assert_ne!(a, synth_samples(&SynthConfig { seed: 12, ..c }).unwrap());
        for s in &a {
            assert!(s.mask.max_label() < 3);
            let fg = s.mask.labels().iter().filter(|&&l| l > 0).count() as f64 / 1024.0;
            assert!(fg > MIN_FOREGROUND && fg < MAX_FOREGROUND, "{fg}");
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(synth_samples(&SynthConfig { extent: 20, ..c }).is_err());
    }

    #[test]
    fn files_round_trip_and_split() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let c = cfg(10, channels, 2);
            let root = dir.path().join(format!("c{channels}"));
            let m = synth_generate(&root, &c).unwrap();
            let loaded = Manifest::load(root.join("manifest.tsv")).unwrap();
            assert_eq!(loaded.entries, m.entries);
            assert_eq!(loaded.seed, Some(11));
            assert_eq!(m.split(Split::Train).count(), 7);
            assert_eq!(m.split(Split::Test).count(), 3);
            let mem = synth_samples(&c).unwrap();
            for e in &m.entries {
                let s = m.load_sample(e).unwrap();
                let i: usize = e.id[5..].parse().unwrap();
                assert_eq!(s, mem[i]);
            }
            assert!(m.load_split(Split::Val, 2).is_err());
            assert!(m.load_split(Split::Train, 1).is_err() || channels == 0);
        }
    }

    #[test]
    fn manifest_rejects_bad_lines() {
        assert!(Manifest::parse("a\tb\tc\n", ".").is_err());
        assert!(Manifest::parse("a\tb\tc\tdev\n", ".").is_err());
        assert!(Manifest::parse("a\tb\tc\ttrain\na\tb\tc\ttest\n", ".").is_err());
        assert!(Manifest::load("/nonexistent/manifest.tsv").is_err());
    }

    #[test]
    fn batches_partition_and_repeat() {
        let ds = Dataset::new(synth_samples(&cfg(10, 1, 2)).unwrap()).unwrap();
        let sizes: Vec<usize> = ds.batches(8, Some(3), None).map(|b| b.ids.len()).collect();
        assert_eq!(sizes, vec![8, 2]);
        let ids = |seed| -> Vec<String> { ds.batches(4, Some(seed), Some(9)).flat_map(|b| b.ids).collect() };
        assert_eq!(ids(3), ids(3));
        assert_ne!(ids(3), ids(4));
        let mut all = ids(3);
        all.sort();
        let mut want: Vec<String> = ds.samples().iter().map(|s| s.id.clone()).collect();
        want.sort();
        assert_eq!(all, want);
        let b = ds.batches(3, None, None).next().unwrap();
        assert_eq!(b.images.shape(), &[3, 1, 32, 32]);
        assert_eq!(b.masks.shape(), [3, 32, 32]);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
    }
}
