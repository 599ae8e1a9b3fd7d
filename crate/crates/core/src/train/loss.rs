//! Cross-entropy plus soft Dice on softmax probabilities.
//!
//! ```text
//! p      = softmax over classes, per pixel
//! CE     = −mean over pixels of ln p[label]
//! D_k    = (2 Σ p_k g_k + s) / (Σ p_k + Σ g_k + s),  k = 1..K−1, sums over the batch
//! loss   = w_ce · CE + w_dice · (1 − mean_k D_k)
//! ```
//!
//! With two classes the softmax equals a per-pixel sigmoid on the logit
//! difference, so the CE term is the usual binary cross-entropy.

use crate::error::{invalid, MewError, Result};
use crate::metrics::SegmentationMask;
use crate::tensor::{CustomOp, Graph, Tensor, Var};

pub const DICE_SMOOTH: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ce: 0.5, dice: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.ce >= 0.0 && self.dice >= 0.0 && self.ce + self.dice > 0.0) {
            return Err(invalid(format!(
                "loss weights must be non-negative with a positive sum, got {}/{}",
                self.ce, self.dice
            )));
        }
        Ok(())
    }
}

/// Value and its two components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub dice: f64,
}

/// Per-pixel softmax of `(B, K, H, W)` logits, same layout.
pub fn softmax_classes(logits: &Tensor) -> Result<Tensor> {
    let [b, k, h, w] = logits.dims4("softmax")?;
    let hw = h * w;
    let z = logits.data();
    let mut p = vec![0.0; z.len()];
    for n in 0..b {
        for q in 0..hw {
            let at = |c: usize| (n * k + c) * hw + q;
            let m = (0..k).map(|c| z[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..k {
                let e = (z[at(c)] - m).exp();
                p[at(c)] = e;
                sum += e;
            }
            for c in 0..k {
                p[at(c)] /= sum;
            }
        }
    }
    Tensor::new(logits.shape(), p)
}

struct Prepared {
    dims: [usize; 4],
    probs: Tensor,
    labels: Vec<u16>,
}

fn prepare(logits: &Tensor, gt: &SegmentationMask) -> Result<Prepared> {
    let dims = logits.dims4("bce_dice_loss")?;
    let [b, k, h, w] = dims;
    if k < 2 {
        return Err(invalid(format!("loss needs at least 2 classes, got {k}")));
    }
    if gt.shape() != [b, h, w] {
        return Err(MewError::ShapeMismatch {
            op: "bce_dice_loss",
            lhs: vec![b, h, w],
            rhs: gt.shape().to_vec(),
        });
    }
    gt.check_classes(k)?;
    Ok(Prepared {
        dims,
        probs: softmax_classes(logits)?,
        labels: gt.labels().to_vec(),
    })
}

impl Prepared {
    fn label(&self, n: usize, q: usize) -> usize {
        let [_, _, h, w] = self.dims;
        self.labels[n * h * w + q] as usize
    }

    /// `(Σ p_k g_k, Σ p_k + Σ g_k)` per foreground class.
    fn dice_sums(&self) -> Vec<(f64, f64)> {
        let [b, k, h, w] = self.dims;
        let hw = h * w;
        let p = self.probs.data();
        let mut sums = vec![(0.0, 0.0); k];
        for n in 0..b {
            for q in 0..hw {
                let y = self.label(n, q);
                for (c, s) in sums.iter_mut().enumerate().skip(1) {
                    let pc = p[(n * k + c) * hw + q];
                    s.1 += pc;
                    if y == c {
                        s.0 += pc;
                        s.1 += 1.0;
                    }
                }
            }
        }
        sums
    }

    fn parts(&self, weights: LossWeights) -> LossParts {
        let [b, k, h, w] = self.dims;
        let hw = h * w;
        let p = self.probs.data();
        let mut ce = 0.0;
        for n in 0..b {
            for q in 0..hw {
                let y = self.label(n, q);
                ce -= p[(n * k + y) * hw + q].max(f64::MIN_POSITIVE).ln();
            }
        }
        ce /= (b * hw) as f64;
        let sums = self.dice_sums();
        let mean_d = sums[1..]
            .iter()
            .map(|&(i, s)| (2.0 * i + DICE_SMOOTH) / (s + DICE_SMOOTH))
            .sum::<f64>()
            / (k - 1) as f64;
        let dice = 1.0 - mean_d;
        LossParts {
            total: weights.ce * ce + weights.dice * dice,
            ce,
            dice,
        }
    }
}

/// Loss value without recording a graph.
pub fn bce_dice_value(logits: &Tensor, gt: &SegmentationMask, weights: LossWeights) -> Result<LossParts> {
    weights.validate()?;
    Ok(prepare(logits, gt)?.parts(weights))
}

struct BceDiceRule {
    prep: Prepared,
    weights: LossWeights,
}

impl CustomOp for BceDiceRule {
    fn name(&self) -> &'static str {
        "bce_dice_loss"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let [b, k, h, w] = self.prep.dims;
        let hw = h * w;
        let p = self.prep.probs.data();
        let upstream = grad[0];
        let n_px = (b * hw) as f64;
        let sums = self.prep.dice_sums();
        // Derivatives of the loss with respect to the probabilities (Dice)
        // and directly to the logits (CE), then through the softmax.
        let dice_scale = -self.weights.dice / (k - 1) as f64;
        let mut gz = vec![0.0; p.len()];
        let mut gp = vec![0.0; k];
        for n in 0..b {
            for q in 0..hw {
                let at = |c: usize| (n * k + c) * hw + q;
                let y = self.prep.label(n, q);
                gp[0] = 0.0;
                for c in 1..k {
                    let (i, s) = sums[c];
                    let g = if y == c { 1.0 } else { 0.0 };
                    let den = s + DICE_SMOOTH;
                    gp[c] = dice_scale * (2.0 * g * den - (2.0 * i + DICE_SMOOTH)) / (den * den);
                }
                let dot: f64 = (0..k).map(|c| p[at(c)] * gp[c]).sum();
                for c in 0..k {
                    let pc = p[at(c)];
                    let ce = self.weights.ce * (pc - if c == y { 1.0 } else { 0.0 }) / n_px;
                    gz[at(c)] = upstream * (ce + pc * (gp[c] - dot));
                }
            }
        }
        vec![Some(gz)]
    }
}

/// Records the loss on `logits` against `gt`; returns a scalar.
pub fn bce_dice_loss(g: &mut Graph, logits: Var, gt: &SegmentationMask, weights: LossWeights) -> Result<Var> {
    weights.validate()?;
    let prep = prepare(g.value(logits), gt)?;
    let value = prep.parts(weights).total;
    Ok(g.custom(
        &[logits],
        Tensor::scalar(value),
        Box::new(BceDiceRule { prep, weights }),
    ))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::check::{check_inputs, GradCheckOptions};

    fn labels(b: usize, h: usize, w: usize, k: u16) -> SegmentationMask {
        SegmentationMask::new(b, h, w, (0..b * h * w).map(|i| ((i * 7 + 3) % 5) as u16 % k).collect()).unwrap()
    }

    #[test]
    fn uniform_binary_gives_ln2() {
        let gt = labels(1, 4, 4, 2);
        let parts = bce_dice_value(&Tensor::zeros(&[1, 2, 4, 4]), &gt, LossWeights::default()).unwrap();
        assert!((parts.ce - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_logits_approach_zero() {
        let gt = labels(2, 3, 3, 3);
        let mut z = vec![0.0; 2 * 3 * 9];
        for n in 0..2 {
            for q in 0..9 {
                let y = gt.image(n)[q] as usize;
                z[(n * 3 + y) * 9 + q] = 60.0;
            }
        }
        let parts = bce_dice_value(&Tensor::new(&[2, 3, 3, 3], z).unwrap(), &gt, LossWeights::default()).unwrap();
        assert!(parts.total >= 0.0 && parts.total < 1e-9, "{parts:?}");
    }

    #[test]
    fn rejects_bad_labels_and_shapes() {
        let z = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(bce_dice_value(&z, &labels(1, 4, 4, 3), LossWeights::default()).is_err());
        assert!(bce_dice_value(&z, &labels(1, 4, 2, 2), LossWeights::default()).is_err());
        let bad = LossWeights { ce: 0.0, dice: 0.0 };
        assert!(bce_dice_value(&z, &labels(1, 4, 4, 2), bad).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (k, weights) in [
            (2, LossWeights::default()),
            (3, LossWeights { ce: 0.3, dice: 1.2 }),
            (2, LossWeights { ce: 0.0, dice: 1.0 }),
        ] {
            let gt = labels(2, 4, 4, k as u16);
            let z = Tensor::uniform(&[2, k, 4, 4], -2.0, 2.0, &mut rng);
            let reports = check_inputs(
                &[z],
                |g, v| bce_dice_loss(g, v[0], &gt, weights),
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(reports.iter().all(|r| r.passes(1e-4)), "{reports:?}");
        }
    }
}
