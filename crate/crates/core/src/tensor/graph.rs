use super::kernels::{self, DwGeom, NormCache};
use super::Tensor;
use crate::error::{invalid, MewError, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for operations defined outside this module.
///
/// `backward` receives the input values, the output value, and the output
/// gradient, and returns one optional gradient buffer per input.
pub trait CustomOp: Send {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    SliceChannels {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Depthwise {
        x: Var,
        k: Var,
        geom: DwGeom,
    },
    Pointwise {
        x: Var,
        k: Var,
        b: Var,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        cache: NormCache,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        batch_stats: bool,
        cache: NormCache,
    },
    Gelu(Var),
    Bilinear(Var),
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Define-by-run record of a forward pass.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and backward simply walks it in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> MewError {
    MewError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are only accumulated for leaves created
    /// with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, available after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape(), g.clone()).expect("gradient shape tracks value shape")
        })
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let out = ta.axpby(1.0, tb, 1.0);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.value(a).map(|v| alpha * v);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, alpha), rg)
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(invalid(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * hw);
        for s in 0..n {
            data.extend_from_slice(&src[(s * c + start) * hw..(s * c + start + len) * hw]);
        }
        let out = Tensor::new(&[n, len, h, w], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::SliceChannels { x, start }, rg))
    }

    /// Splits `x` into `parts` equal contiguous channel groups.
    pub fn split_channels(&mut self, x: Var, parts: usize) -> Result<Vec<Var>> {
        let [_, c, _, _] = self.value(x).dims4("split_channels")?;
        if parts == 0 || c % parts != 0 {
            return Err(MewError::Indivisible {
                op: "split_channels",
                channels: c,
                parts,
            });
        }
        let step = c / parts;
        (0..parts)
            .map(|p| self.slice_channels(x, p * step, step))
            .collect()
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| invalid("concat_channels of an empty list"))?;
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut total = 0;
        for &v in xs {
            let [vn, vc, vh, vw] = self.value(v).dims4("concat_channels")?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(mismatch("concat_channels", self.value(first), self.value(v)));
            }
            total += vc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for s in 0..n {
            for &v in xs {
                let t = self.value(v);
                let vc = t.shape()[1];
                data.extend_from_slice(&t.data()[s * vc * hw..(s + 1) * vc * hw]);
            }
        }
        let out = Tensor::new(&[n, total, h, w], data)?;
        let rg = self.any_grad(xs);
        Ok(self.push(out, Op::Concat(xs.to_vec()), rg))
    }

    /// Depthwise cross-correlation with a `(C, kh, kw)` kernel.
    pub fn conv_depthwise(
        &mut self,
        x: Var,
        kernel: Var,
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("conv_depthwise")?;
        let ks = self.value(kernel).shape().to_vec();
        let [kc, kh, kw] = ks[..] else {
            return Err(MewError::Rank {
                op: "conv_depthwise kernel",
                expected: 3,
                shape: ks,
            });
        };
        if kc != c {
            return Err(mismatch("conv_depthwise", self.value(x), self.value(kernel)));
        }
        let (ph, pw) = padding;
        let (Some(oh), Some(ow)) = (
            kernels::conv_out_extent(h, kh, stride, ph),
            kernels::conv_out_extent(w, kw, stride, pw),
        ) else {
            return Err(invalid(format!(
                "kernel {kh}x{kw} with stride {stride}, padding {padding:?} does not fit {h}x{w}"
            )));
        };
        let geom = DwGeom {
            n,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            ph,
            pw,
            oh,
            ow,
        };
        let data = kernels::depthwise_forward(&geom, self.value(x).data(), self.value(kernel).data());
        let out = Tensor::new(&[n, c, oh, ow], data)?;
        let rg = self.any_grad(&[x, kernel]);
        Ok(self.push(out, Op::Depthwise { x, k: kernel, geom }, rg))
    }

    /// Per-pixel linear map with a `(C_out, C_in)` kernel and `(C_out)` bias.
    pub fn conv_pointwise(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let [n, cin, h, w] = self.value(x).dims4("conv_pointwise")?;
        let ks = self.value(kernel).shape().to_vec();
        let [cout, kin] = ks[..] else {
            return Err(MewError::Rank {
                op: "conv_pointwise kernel",
                expected: 2,
                shape: ks,
            });
        };
        if kin != cin {
            return Err(mismatch("conv_pointwise", self.value(x), self.value(kernel)));
        }
        if self.value(bias).shape() != [cout] {
            return Err(mismatch("conv_pointwise bias", self.value(kernel), self.value(bias)));
        }
        let data = kernels::pointwise_forward(
            n,
            cin,
            cout,
            h * w,
            self.value(x).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let out = Tensor::new(&[n, cout, h, w], data)?;
        let rg = self.any_grad(&[x, kernel, bias]);
        Ok(self.push(out, Op::Pointwise { x, k: kernel, b: bias }, rg))
    }

    fn check_affine(&self, op: &'static str, c: usize, gamma: Var, beta: Var) -> Result<()> {
        for v in [gamma, beta] {
            if self.value(v).shape() != [c] {
                return Err(MewError::ShapeMismatch {
                    op,
                    lhs: vec![c],
                    rhs: self.value(v).shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn group_norm(
        &mut self,
        x: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var> {
        let dims = self.value(x).dims4("group_norm")?;
        let c = dims[1];
        if groups == 0 || c % groups != 0 {
            return Err(MewError::Indivisible {
                op: "group_norm",
                channels: c,
                parts: groups,
            });
        }
        if eps <= 0.0 {
            return Err(invalid("group_norm eps must be positive"));
        }
        self.check_affine("group_norm", c, gamma, beta)?;
        let (y, cache) = kernels::group_norm_forward(
            dims,
            groups,
            eps,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let out = Tensor::new(&dims, y)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            },
            rg,
        ))
    }

    /// Batch normalization. `stats` supplies fixed (running) statistics;
    /// `None` normalizes with the batch's own moments, which are returned so
    /// the caller can update running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let dims = self.value(x).dims4("batch_norm")?;
        let c = dims[1];
        self.check_affine("batch_norm", c, gamma, beta)?;
        let batch_stats = stats.is_none();
        let (mean, var) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => kernels::channel_moments(dims, self.value(x).data()),
        };
        let (y, cache) = kernels::batch_norm_forward(
            dims,
            eps,
            self.value(x).data(),
            &mean,
            &var,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let out = Tensor::new(&dims, y)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                batch_stats,
                cache,
            },
            rg,
        );
        Ok((v, mean, var))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::gelu);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Align-corners bilinear resampling of the two trailing axes.
    pub fn bilinear_interpolate(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let dims = self.value(x).dims4("bilinear_interpolate")?;
        if out_h == 0 || out_w == 0 {
            return Err(invalid(format!(
                "bilinear target extent {out_h}x{out_w} must be positive"
            )));
        }
        let data = kernels::bilinear_forward(dims, out_h, out_w, self.value(x).data());
        let out = Tensor::new(&[dims[0], dims[1], out_h, out_w], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Bilinear(x), rg))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn CustomOp>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients from previous sweeps are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(MewError::NonScalarLoss(shape.to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contribs = self.node_backward(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (v, cg) in contribs {
                self.accumulate(v, cg);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), node.value.len());
        match &mut node.grad {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => node.grad = Some(g),
        }
    }

    fn node_backward(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let gb: Vec<f64> = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                    out.push((*a, gb));
                }
                if wants(*b) {
                    let ga: Vec<f64> = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                    out.push((*b, ga));
                }
            }
            Op::Scale(a, alpha) => out.push((*a, g.iter().map(|v| v * alpha).collect())),
            Op::Sum(a) => out.push((*a, vec![g[0]; val(*a).len()])),
            Op::SliceChannels { x, start } => {
                let [n, c, h, w] = val(*x).dims4("slice").unwrap();
                let len = node.value.shape()[1];
                let hw = h * w;
                let mut gx = vec![0.0; n * c * hw];
                for s in 0..n {
                    gx[(s * c + start) * hw..(s * c + start + len) * hw]
                        .copy_from_slice(&g[s * len * hw..(s + 1) * len * hw]);
                }
                out.push((*x, gx));
            }
            Op::Concat(xs) => {
                let [n, total, h, w] = node.value.dims4("concat").unwrap();
                let hw = h * w;
                let mut offset = 0;
                for &v in xs {
                    let vc = val(v).shape()[1];
                    if wants(v) {
                        let mut gv = Vec::with_capacity(n * vc * hw);
                        for s in 0..n {
                            let base = (s * total + offset) * hw;
                            gv.extend_from_slice(&g[base..base + vc * hw]);
                        }
                        out.push((v, gv));
                    }
                    offset += vc;
                }
            }
            Op::Depthwise { x, k, geom } => {
                let (gx, gk) = kernels::depthwise_backward(geom, val(*x).data(), val(*k).data(), g);
                out.push((*x, gx));
                out.push((*k, gk));
            }
            Op::Pointwise { x, k, b } => {
                let [n, cin, h, w] = val(*x).dims4("pointwise").unwrap();
                let cout = val(*k).shape()[0];
                let (gx, gk, gb) =
                    kernels::pointwise_backward(n, cin, cout, h * w, val(*x).data(), val(*k).data(), g);
                out.push((*x, gx));
                out.push((*k, gk));
                out.push((*b, gb));
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            } => {
                let dims = val(*x).dims4("group_norm").unwrap();
                let (gx, gg, gb) =
                    kernels::group_norm_backward(dims, *groups, cache, val(*gamma).data(), g);
                out.push((*x, gx));
                out.push((*gamma, gg));
                out.push((*beta, gb));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                batch_stats,
                cache,
            } => {
                let dims = val(*x).dims4("batch_norm").unwrap();
                let (gx, gg, gb) =
                    kernels::batch_norm_backward(dims, *batch_stats, cache, val(*gamma).data(), g);
                out.push((*x, gx));
                out.push((*gamma, gg));
                out.push((*beta, gb));
            }
            Op::Gelu(x) => {
                let gx = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(gv, &xv)| gv * kernels::gelu_grad(xv))
                    .collect();
                out.push((*x, gx));
            }
            Op::Bilinear(x) => {
                let dims = val(*x).dims4("bilinear").unwrap();
                let [_, _, oh, ow] = node.value.dims4("bilinear").unwrap();
                out.push((*x, kernels::bilinear_backward(dims, oh, ow, g)));
            }
            Op::Custom { inputs, rule } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let grads = rule.backward(&ins, &node.value, g);
                debug_assert_eq!(grads.len(), inputs.len(), "{}", rule.name());
                for (&v, gv) in inputs.iter().zip(grads) {
                    if let Some(gv) = gv {
                        out.push((v, gv));
                    }
                }
            }
        }
        out
    }
}
