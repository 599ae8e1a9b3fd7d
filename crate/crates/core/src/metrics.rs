//! Segmentation metrics: overlap scores, confusion-derived rates, and HD95.
//!
//! Conventions for degenerate cases:
//!
//! * DSC and IoU are 1 when prediction and ground truth are both empty for a
//!   class, and 0 when exactly one is empty.
//! * Specificity and sensitivity are 1 when their denominator is zero.
//! * HD95 is not defined when the ground truth lacks the class. When the
//!   ground truth has it but the prediction does not, the image diagonal
//!   (in physical units) is used.
//! * Multi-class means are unweighted over foreground classes (label ≥ 1)
//!   that occur somewhere in the ground truth. If none occur, all foreground
//!   classes are averaged.
//!
//! HD95 pools the directed boundary distances in both directions and takes
//! the inclusive linearly interpolated 95th percentile, i.e. position
//! `0.95 · (n − 1)` in the sorted list.

use serde::{Deserialize, Serialize};

use crate::error::{MewError, Result};
use crate::tensor::Tensor;

/// Integer labels of shape `(batch, H, W)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMask {
    batch: usize,
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl SegmentationMask {
    pub fn new(batch: usize, height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if batch * height * width != labels.len() || labels.is_empty() {
            return Err(MewError::InvalidArgument(format!(
                "mask ({batch},{height},{width}) needs {} labels, got {}",
                batch * height * width,
                labels.len()
            )));
        }
        Ok(Self {
            batch,
            height,
            width,
            labels,
        })
    }

    /// Per-pixel argmax over the class axis of `(B, K, H, W)` logits. Ties
    /// resolve to the lowest class.
    pub fn argmax(logits: &Tensor) -> Result<Self> {
        let [b, k, h, w] = logits.dims4("argmax")?;
        let hw = h * w;
        let d = logits.data();
        let mut labels = vec![0u16; b * hw];
        for n in 0..b {
            for p in 0..hw {
                let mut best = 0;
                for c in 1..k {
                    if d[(n * k + c) * hw + p] > d[(n * k + best) * hw + p] {
                        best = c;
                    }
                }
                labels[n * hw + p] = best as u16;
            }
        }
        Self::new(b, h, w, labels)
    }

    /// Stacks single-image masks along the batch axis.
    pub fn stack(masks: &[&SegmentationMask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| MewError::InvalidArgument("cannot stack zero masks".into()))?;
        let mut labels = Vec::new();
        let mut batch = 0;
        for m in masks {
            if (m.height, m.width) != (first.height, first.width) {
                return Err(MewError::ShapeMismatch {
                    op: "stack masks",
                    lhs: first.shape().to_vec(),
                    rhs: m.shape().to_vec(),
                });
            }
            batch += m.batch;
            labels.extend_from_slice(&m.labels);
        }
        Self::new(batch, first.height, first.width, labels)
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.batch, self.height, self.width]
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    /// Labels of image `n`, row-major.
    pub fn image(&self, n: usize) -> &[u16] {
        let hw = self.height * self.width;
        &self.labels[n * hw..(n + 1) * hw]
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= num_classes) {
            Some(&l) => Err(MewError::LabelOutOfRange {
                label: l as usize,
                classes: num_classes,
            }),
            None => Ok(()),
        }
    }
}

/// One-vs-rest pixel counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

fn same_shape(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(MewError::ShapeMismatch {
            op: "metrics",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn confusion_counts(
    pred: &SegmentationMask,
    gt: &SegmentationMask,
    cls: u16,
) -> Result<ConfusionCounts> {
    same_shape(pred, gt)?;
    Ok(counts_slice(&pred.labels, &gt.labels, cls))
}

fn counts_slice(pred: &[u16], gt: &[u16], cls: u16) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p == cls, g == cls) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn dsc(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn iou(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_)
}

/// Mean IoU over the given per-class counts.
pub fn miou(counts: &[ConfusionCounts]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().map(iou).sum::<f64>() / counts.len() as f64
}

/// `(accuracy, specificity, sensitivity)`.
pub fn acc_spe_sen(c: &ConfusionCounts) -> (f64, f64, f64) {
    (
        ratio(c.tp + c.tn, c.total()),
        ratio(c.tn, c.tn + c.fp),
        ratio(c.tp, c.tp + c.fn_),
    )
}

/// Foreground pixels of `cls` with a 4-neighbour outside the class; the
/// image border counts as outside. Points are `(row, col)` in scan order.
pub fn boundary_extract(labels: &[u16], height: usize, width: usize, cls: u16) -> Vec<(usize, usize)> {
    let inside = |r: usize, c: usize| labels[r * width + c] == cls;
    let mut out = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if !inside(r, c) {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == height
                || c + 1 == width
                || !inside(r - 1, c)
                || !inside(r + 1, c)
                || !inside(r, c - 1)
                || !inside(r, c + 1);
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// Inclusive percentile with linear interpolation; `q` in `[0, 1]`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = pos - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}

/// 1D squared distance transform (lower envelope of parabolas) with sample
/// spacing `step`. `f[i]` is the input cost, `INFINITY` for no site.
fn edt_1d(f: &[f64], step: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let s2 = step * step;
    let sites: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let pos = |i: usize| i as f64;
    let mut k = 0;
    v[0] = sites[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for &q in &sites[1..] {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + s2 * pos(q) * pos(q)) - (f[p] + s2 * pos(p) * pos(p)))
                / (2.0 * s2 * (pos(q) - pos(p)));
            // z[0] is -inf, so this stops at k = 0.
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(i) {
            k += 1;
        }
        let d = (pos(i) - pos(v[k])) * step;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest point of
/// `sites`, with row spacing `spacing.0` and column spacing `spacing.1`.
pub fn squared_distance_map(
    sites: &[(usize, usize)],
    height: usize,
    width: usize,
    spacing: (f64, f64),
) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; height * width];
    for &(r, c) in sites {
        grid[r * width + c] = 0.0;
    }
    let n = height.max(width);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut col = vec![0.0; height];
    let mut tmp = vec![0.0; n];
    for c in 0..width {
        for r in 0..height {
            col[r] = grid[r * width + c];
        }
        edt_1d(&col, spacing.0, &mut tmp[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = tmp[r];
        }
    }
    for r in 0..height {
        let row = grid[r * width..(r + 1) * width].to_vec();
        edt_1d(&row, spacing.1, &mut grid[r * width..(r + 1) * width], &mut v, &mut z);
    }
    grid
}

/// HD95 for one image and class. `None` when the ground truth lacks the
/// class.
pub fn hd95_image(
    pred: &[u16],
    gt: &[u16],
    height: usize,
    width: usize,
    cls: u16,
    spacing: (f64, f64),
) -> Option<f64> {
    let bg = boundary_extract(gt, height, width, cls);
    if bg.is_empty() {
        return None;
    }
    let bp = boundary_extract(pred, height, width, cls);
    if bp.is_empty() {
        let (hh, ww) = (height as f64 * spacing.0, width as f64 * spacing.1);
        return Some((hh * hh + ww * ww).sqrt());
    }
    let to_gt = squared_distance_map(&bg, height, width, spacing);
    let to_pred = squared_distance_map(&bp, height, width, spacing);
    let mut d: Vec<f64> = bp
        .iter()
        .map(|&(r, c)| to_gt[r * width + c].sqrt())
        .chain(bg.iter().map(|&(r, c)| to_pred[r * width + c].sqrt()))
        .collect();
    Some(percentile(&mut d, 0.95))
}

/// Mean HD95 over the images of a batch where it is defined.
pub fn hd95(
    pred: &SegmentationMask,
    gt: &SegmentationMask,
    cls: u16,
    spacing: (f64, f64),
) -> Result<Option<f64>> {
    same_shape(pred, gt)?;
    let vals: Vec<f64> = (0..pred.batch)
        .filter_map(|n| hd95_image(pred.image(n), gt.image(n), pred.height, pred.width, cls, spacing))
        .collect();
    Ok(mean_opt(&vals))
}

fn mean_opt(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One row of a metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Class label, or `None` for the mean row.
    pub class: Option<u16>,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "DSC")]
    pub dsc: f64,
    #[serde(rename = "Acc")]
    pub acc: f64,
    #[serde(rename = "Spe")]
    pub spe: f64,
    #[serde(rename = "Sen")]
    pub sen: f64,
    #[serde(rename = "HD95")]
    pub hd95: Option<f64>,
}

pub const REPORT_COLUMNS: [&str; 6] = ["mIoU", "DSC", "Acc", "Spe", "Sen", "HD95"];

/// Per-class rows for every foreground class plus the aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub images: usize,
    pub classes: Vec<MetricRow>,
    pub mean: MetricRow,
}

impl MetricsReport {
    /// Tab-separated table with a header row; `NA` marks undefined HD95.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("class\t{}\n", REPORT_COLUMNS.join("\t"));
        for row in self.classes.iter().chain(std::iter::once(&self.mean)) {
            let name = row.class.map_or("mean".to_string(), |c| c.to_string());
            let hd = row.hd95.map_or("NA".to_string(), |v| format!("{v:.6}"));
            s += &format!(
                "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{hd}\n",
                row.miou, row.dsc, row.acc, row.spe, row.sen
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Accumulates counts over a dataset, then reports.
#[derive(Clone, Debug)]
pub struct Evaluator {
    num_classes: usize,
    spacing: (f64, f64),
    images: usize,
    counts: Vec<ConfusionCounts>,
    hd: Vec<Vec<f64>>,
}

impl Evaluator {
    pub fn new(num_classes: usize, spacing: (f64, f64)) -> Result<Self> {
        if num_classes < 2 {
            return Err(MewError::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            num_classes,
            spacing,
            images: 0,
            counts: vec![ConfusionCounts::default(); num_classes],
            hd: vec![Vec::new(); num_classes],
        })
    }

    pub fn add(&mut self, pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
        same_shape(pred, gt)?;
        pred.check_classes(self.num_classes)?;
        gt.check_classes(self.num_classes)?;
        for n in 0..pred.batch {
            let (p, g) = (pred.image(n), gt.image(n));
            for cls in 1..self.num_classes {
                let c = cls as u16;
                self.counts[cls].merge(&counts_slice(p, g, c));
                if let Some(d) = hd95_image(p, g, pred.height, pred.width, c, self.spacing) {
                    self.hd[cls].push(d);
                }
            }
        }
        self.images += pred.batch;
        Ok(())
    }

    pub fn counts(&self, cls: usize) -> ConfusionCounts {
        self.counts[cls]
    }

    pub fn report(&self) -> MetricsReport {
        let row = |cls: usize| {
            let c = &self.counts[cls];
            let (acc, spe, sen) = acc_spe_sen(c);
            MetricRow {
                class: Some(cls as u16),
                miou: iou(c),
                dsc: dsc(c),
                acc,
                spe,
                sen,
                hd95: mean_opt(&self.hd[cls]),
            }
        };
        let classes: Vec<MetricRow> = (1..self.num_classes).map(row).collect();
        let present: Vec<&MetricRow> = classes
            .iter()
            .filter(|r| {
                let c = &self.counts[r.class.unwrap() as usize];
                c.tp + c.fn_ > 0
            })
            .collect();
        let pool: Vec<&MetricRow> = if present.is_empty() {
            classes.iter().collect()
        } else {
            present
        };
        let avg = |f: &dyn Fn(&MetricRow) -> f64| pool.iter().map(|r| f(r)).sum::<f64>() / pool.len() as f64;
        let hds: Vec<f64> = pool.iter().filter_map(|r| r.hd95).collect();
        let mean = MetricRow {
            class: None,
            miou: avg(&|r| r.miou),
            dsc: avg(&|r| r.dsc),
            acc: avg(&|r| r.acc),
            spe: avg(&|r| r.spe),
            sen: avg(&|r| r.sen),
            hd95: mean_opt(&hds),
        };
        MetricsReport {
            num_classes: self.num_classes,
            images: self.images,
            classes,
            mean,
        }
    }
}
