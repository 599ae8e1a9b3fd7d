//! Parameterized layers shared by the MEW block and the U-shaped network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MewError, Result};
use crate::tensor::{ParamId, ParamStore, Session, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const GROUPS: usize = 4;

/// Registers parameters with deterministic initialization.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn kernel(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, &mut self.rng);
        self.store.add(name, t, true)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value), true)
    }

    pub fn buffer(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value), false)
    }
}

/// 1×1 convolution with bias.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Pointwise {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            weight: b.kernel(format!("{name}.weight"), &[cout, cin], cin),
            bias: b.constant(format!("{name}.bias"), &[cout], 0.0),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (k, b) = (s.param(self.weight), s.param(self.bias));
        s.graph.conv_pointwise(x, k, b)
    }
}

/// Per-channel spatial convolution without bias.
#[derive(Clone, Debug)]
pub struct Depthwise {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: (usize, usize),
}

impl Depthwise {
    pub fn new(
        b: &mut Builder,
        name: &str,
        channels: usize,
        kernel: (usize, usize),
        stride: usize,
    ) -> Self {
        Self {
            weight: b.kernel(
                format!("{name}.weight"),
                &[channels, kernel.0, kernel.1],
                kernel.0 * kernel.1,
            ),
            stride,
            padding: (kernel.0 / 2, kernel.1 / 2),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let k = s.param(self.weight);
        s.graph.conv_depthwise(x, k, self.stride, self.padding)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Group,
    Batch,
}

impl std::str::FromStr for NormKind {
    type Err = MewError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(NormKind::Group),
            "batch" => Ok(NormKind::Batch),
            other => Err(MewError::Config(format!(
                "norm must be `group` or `batch`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormKind::Group => "group",
            NormKind::Batch => "batch",
        })
    }
}

/// GroupNorm with four groups, or BatchNorm with running statistics.
#[derive(Clone, Debug)]
pub enum Norm {
    Group {
        gamma: ParamId,
        beta: ParamId,
    },
    Batch {
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    },
}

impl Norm {
    pub fn new(b: &mut Builder, name: &str, kind: NormKind, channels: usize) -> Result<Self> {
        let gamma = b.constant(format!("{name}.gamma"), &[channels], 1.0);
        let beta = b.constant(format!("{name}.beta"), &[channels], 0.0);
        Ok(match kind {
            NormKind::Group => {
                if !channels.is_multiple_of(GROUPS) {
                    return Err(MewError::Indivisible {
                        op: "group_norm",
                        channels,
                        parts: GROUPS,
                    });
                }
                Norm::Group { gamma, beta }
            }
            NormKind::Batch => Norm::Batch {
                gamma,
                beta,
                running_mean: b.buffer(format!("{name}.running_mean"), &[channels], 0.0),
                running_var: b.buffer(format!("{name}.running_var"), &[channels], 1.0),
            },
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        match *self {
            Norm::Group { gamma, beta } => {
                let (g, b) = (s.param(gamma), s.param(beta));
                s.graph.group_norm(x, GROUPS, g, b, NORM_EPS)
            }
            Norm::Batch {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let (g, b) = (s.param(gamma), s.param(beta));
                if s.training() {
                    let [n, _, h, w] = s.graph.value(x).dims4("batch_norm")?;
                    let count = (n * h * w) as f64;
                    let (y, mean, var) = s.graph.batch_norm(x, g, b, NORM_EPS, None)?;
                    let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                    let rm = s.buffer(running_mean);
                    let rv = s.buffer(running_var);
                    let new_mean = blend(rm.data(), &mean, 1.0);
                    let new_var = blend(rv.data(), &var, unbias);
                    s.update_buffer(running_mean, Tensor::new(rm.shape(), new_mean)?);
                    s.update_buffer(running_var, Tensor::new(rv.shape(), new_var)?);
                    Ok(y)
                } else {
                    let rm = s.buffer(running_mean).data();
                    let rv = s.buffer(running_var).data();
                    let (y, _, _) = s.graph.batch_norm(x, g, b, NORM_EPS, Some((rm, rv)))?;
                    Ok(y)
                }
            }
        }
    }
}

fn blend(running: &[f64], batch: &[f64], scale: f64) -> Vec<f64> {
    running
        .iter()
        .zip(batch)
        .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * scale)
        .collect()
}

/// Depthwise convolution followed by a pointwise channel change.
#[derive(Clone, Debug)]
pub struct SeparableConv {
    pub depthwise: Depthwise,
    pub pointwise: Pointwise,
}

impl SeparableConv {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            depthwise: Depthwise::new(b, &format!("{name}.dw"), cin, (3, 3), stride),
            pointwise: Pointwise::new(b, &format!("{name}.pw"), cin, cout),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(s, x)?;
        self.pointwise.forward(s, y)
    }
}

/// Expand → GELU → depthwise → GELU → project, plus the input.
///
/// `kernel` is `(3, 3)` for the 2D variant; the 1D variants use `(1, 3)` or
/// `(3, 1)`, which convolves each row (or column) independently, the same
/// as folding the other spatial axis into the batch.
#[derive(Clone, Debug)]
pub struct InvertedResidual {
    pub expand: Pointwise,
    pub depthwise: Depthwise,
    pub project: Pointwise,
}

pub const IR_EXPANSION: usize = 4;

impl InvertedResidual {
    pub fn new(b: &mut Builder, name: &str, channels: usize, kernel: (usize, usize)) -> Self {
        let hidden = channels * IR_EXPANSION;
        Self {
            expand: Pointwise::new(b, &format!("{name}.expand"), channels, hidden),
            depthwise: Depthwise::new(b, &format!("{name}.dw"), hidden, kernel, 1),
            project: Pointwise::new(b, &format!("{name}.project"), hidden, channels),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.expand.forward(s, x)?;
        let h = s.graph.gelu(h);
        let h = self.depthwise.forward(s, h)?;
        let h = s.graph.gelu(h);
        let h = self.project.forward(s, h)?;
        s.graph.add(x, h)
    }
}
