//! AdamW, SGD with momentum, and the cosine learning-rate schedule.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{MewError, Result};
use crate::tensor::{ParamStore, Tensor};

/// `lr_min + (lr_max − lr_min) · (1 + cos(π t / T)) / 2`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let t = t.min(total) as f64;
    lr_min + (lr_max - lr_min) * (1.0 + (PI * t / total as f64).cos()) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// One AdamW update at step `t` (1-based): decay, moments, bias-corrected
/// step.
pub fn adamw_step(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, p: &AdamWParams) {
    let bc1 = 1.0 - p.beta1.powi(t as i32);
    let bc2 = 1.0 - p.beta2.powi(t as i32);
    for i in 0..w.len() {
        w[i] -= lr * p.weight_decay * w[i];
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        w[i] -= lr * mh / (vh.sqrt() + p.eps);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdParams {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdParams {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Classical momentum: `v ← μ v + (g + wd w)`, `w ← w − lr v`.
pub fn sgd_step(w: &mut [f64], g: &[f64], vel: &mut [f64], lr: f64, p: &SgdParams) {
    for i in 0..w.len() {
        let d = g[i] + p.weight_decay * w[i];
        vel[i] = p.momentum * vel[i] + d;
        w[i] -= lr * vel[i];
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    AdamW,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = MewError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adamw" => Ok(OptimizerKind::AdamW),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(MewError::Config(format!("unknown optimizer `{s}` (adamw|sgd)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerSpec {
    AdamW(AdamWParams),
    Sgd(SgdParams),
}

impl OptimizerSpec {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerSpec::AdamW(_) => OptimizerKind::AdamW,
            OptimizerSpec::Sgd(_) => OptimizerKind::Sgd,
        }
    }
}

/// Per-parameter state for a whole [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub spec: OptimizerSpec,
    pub step: u64,
    /// First slot: AdamW `m` or SGD velocity. Second slot: AdamW `v`.
    slots: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, store: &ParamStore) -> Self {
        let slots = store
            .iter()
            .map(|(_, p)| {
                p.trainable.then(|| {
                    let n = p.value.len();
                    let second = match spec {
                        OptimizerSpec::AdamW(_) => vec![0.0; n],
                        OptimizerSpec::Sgd(_) => Vec::new(),
                    };
                    (vec![0.0; n], second)
                })
            })
            .collect();
        Self { spec, step: 0, slots }
    }

    /// Applies one update from the gradients stored in `store`.
    pub fn apply(&mut self, store: &mut ParamStore, lr: f64) {
        self.step += 1;
        for (p, slot) in store.iter_mut().zip(&mut self.slots) {
            let Some((a, b)) = slot else { continue };
            let g = p.grad.data().to_vec();
            let w = p.value.data_mut();
            match &self.spec {
                OptimizerSpec::AdamW(h) => adamw_step(w, &g, a, b, self.step, lr, h),
                OptimizerSpec::Sgd(h) => sgd_step(w, &g, a, lr, h),
            }
        }
    }

    /// State as named tensors for checkpointing.
    pub fn state_tensors(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for ((_, p), slot) in store.iter().zip(&self.slots) {
            let Some((a, b)) = slot else { continue };
            let shape = p.value.shape();
            out.push((format!("optim/{}/0", p.name), Tensor::new(shape, a.clone()).expect("param shape")));
            if !b.is_empty() {
                out.push((format!("optim/{}/1", p.name), Tensor::new(shape, b.clone()).expect("param shape")));
            }
        }
        out
    }

    /// Restores state written by [`Optimizer::state_tensors`].
    pub fn load_state(&mut self, store: &ParamStore, step: u64, find: impl Fn(&str) -> Option<Tensor>) -> Result<()> {
        for ((_, p), slot) in store.iter().zip(&mut self.slots) {
            let Some((a, b)) = slot else { continue };
            let get = |k: usize, dst: &mut Vec<f64>| -> Result<()> {
                let name = format!("optim/{}/{k}", p.name);
                let t = find(&name).ok_or_else(|| MewError::Checkpoint(format!("missing {name}")))?;
                if t.shape() != p.value.shape() {
                    return Err(MewError::Checkpoint(format!("{name}: shape {:?}", t.shape())));
                }
                *dst = t.into_data();
                Ok(())
            };
            get(0, a)?;
            if !b.is_empty() {
                get(1, b)?;
            }
        }
        self.step = step;
        Ok(())
    }
}

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .flat_map(|(_, p)| p.grad.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 1e-3, 1e-5), 1e-3);
        assert_eq!(cosine_lr(10, 10, 1e-3, 1e-5), 1e-5);
        assert!((cosine_lr(5, 10, 1e-3, 1e-5) - (1e-3 + 1e-5) / 2.0).abs() < 1e-18);
        assert!((1..10).all(|t| cosine_lr(t, 10, 1.0, 0.0) < cosine_lr(t - 1, 10, 1.0, 0.0)));
    }

    #[test]
    fn adamw_no_grad_cases() {
        let p0 = AdamWParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut w = [1.5, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adamw_step(&mut w, &[0.0; 2], &mut m, &mut v, 1, 0.1, &p0);
        assert_eq!(w, [1.5, -2.0]);
        let p = AdamWParams::default();
        adamw_step(&mut w, &[0.0; 2], &mut m, &mut v, 2, 0.1, &p);
        assert_eq!(w, [1.5 * (1.0 - 0.1 * 1e-2), -2.0 * (1.0 - 0.1 * 1e-2)]);
    }

    #[test]
    fn adamw_three_steps_on_square() {
        // Hand trace of f(w) = w², g = 2w, lr = 0.1, wd = 0.01.
        let p = AdamWParams::default();
        let (lr, b1, b2, eps, wd) = (0.1, 0.9, 0.999, 1e-8, 0.01);
        let (mut w_ref, mut m_ref, mut v_ref) = (1.0f64, 0.0f64, 0.0f64);
        let mut w = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for t in 1..=3 {
            let g = 2.0 * w_ref;
            w_ref *= 1.0 - lr * wd;
            m_ref = b1 * m_ref + (1.0 - b1) * g;
            v_ref = b2 * v_ref + (1.0 - b2) * g * g;
            let mh = m_ref / (1.0 - b1.powi(t));
            let vh = v_ref / (1.0 - b2.powi(t));
            w_ref -= lr * mh / (vh.sqrt() + eps);

            let gs = [2.0 * w[0]];
            adamw_step(&mut w, &gs, &mut m, &mut v, t as u64, lr, &p);
            assert!((w[0] - w_ref).abs() < 1e-15, "step {t}: {} vs {w_ref}", w[0]);
        }
        // First step moves by ~lr since m̂/√v̂ = sign(g).
        assert!((w_ref - 0.7).abs() < 0.01);
    }

    #[test]
    fn sgd_cases() {
        let plain = SgdParams {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut w = [1.0];
        let mut vel = [0.0];
        sgd_step(&mut w, &[0.5], &mut vel, 0.2, &plain);
        assert_eq!(w, [0.9]);

        let coast = SgdParams {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut w = [1.0];
        let mut vel = [0.3];
        sgd_step(&mut w, &[0.0], &mut vel, 0.1, &coast);
        assert!((w[0] - (1.0 - 0.1 * 0.9 * 0.3)).abs() < 1e-15);

        // Two steps on f(w) = w² with lr 0.1, μ 0.9, wd 1e-4:
        // d1 = 2 + 1e-4 = 2.0001, v1 = 2.0001, w1 = 0.79999
        // d2 = 1.59998 + 0.000079999 = 1.600059999, v2 = 1.800090 + 1.600059999 = 3.400149999,
        // w2 = 0.79999 − 0.3400149999 = 0.4599750001
        let p = SgdParams::default();
        let mut w = [1.0];
        let mut vel = [0.0];
        for _ in 0..2 {
            let g = [2.0 * w[0]];
            sgd_step(&mut w, &g, &mut vel, 0.1, &p);
        }
        assert!((w[0] - 0.4599750001).abs() < 1e-12, "{}", w[0]);
    }
}
