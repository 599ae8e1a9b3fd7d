//! Forward and backward kernels on raw NCHW buffers.
//!
//! These are free functions so the graph can call them and oracle tests can
//! check them without a recording in between.

use std::f64::consts::PI;

/// Output extent of a strided, padded correlation along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DwGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl DwGeom {
    /// Input offset of output column `ox` for kernel column `kx`, or `None`
    /// when it falls in the padding.
    #[inline]
    fn col(&self, ox: usize, kx: usize) -> Option<usize> {
        let ix = (ox * self.stride + kx) as isize - self.pw as isize;
        (ix >= 0 && (ix as usize) < self.w).then_some(ix as usize)
    }

    #[inline]
    fn row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.ph as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    /// Range of output columns whose tap `kx` lands inside the input.
    #[inline]
    fn valid_cols(&self, kx: usize) -> std::ops::Range<usize> {
        let lo = (0..self.ow).find(|&ox| self.col(ox, kx).is_some());
        match lo {
            None => 0..0,
            Some(lo) => {
                let hi = (lo..self.ow)
                    .rev()
                    .find(|&ox| self.col(ox, kx).is_some())
                    .unwrap();
                lo..hi + 1
            }
        }
    }
}

/// Per-channel 2D cross-correlation.
pub fn depthwise_forward(g: &DwGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.c * g.oh * g.ow];
    let col_ranges: Vec<_> = (0..g.kw).map(|kx| g.valid_cols(kx)).collect();
    for n in 0..g.n {
        for c in 0..g.c {
            let xin = &x[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
            let kc = &k[c * g.kh * g.kw..][..g.kh * g.kw];
            let o = &mut out[(n * g.c + c) * g.oh * g.ow..][..g.oh * g.ow];
            for oy in 0..g.oh {
                let orow = &mut o[oy * g.ow..][..g.ow];
                for ky in 0..g.kh {
                    let Some(iy) = g.row(oy, ky) else { continue };
                    let xrow = &xin[iy * g.w..][..g.w];
                    for kx in 0..g.kw {
                        let wv = kc[ky * g.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for ox in col_ranges[kx].clone() {
                            let ix = ox * g.stride + kx - g.pw;
                            orow[ox] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_kernel)`.
pub fn depthwise_backward(g: &DwGeom, x: &[f64], k: &[f64], go: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let col_ranges: Vec<_> = (0..g.kw).map(|kx| g.valid_cols(kx)).collect();
    for n in 0..g.n {
        for c in 0..g.c {
            let base_in = (n * g.c + c) * g.h * g.w;
            let xin = &x[base_in..][..g.h * g.w];
            let gxin = &mut gx[base_in..][..g.h * g.w];
            let kc = &k[c * g.kh * g.kw..][..g.kh * g.kw];
            let gkc = &mut gk[c * g.kh * g.kw..][..g.kh * g.kw];
            let gout = &go[(n * g.c + c) * g.oh * g.ow..][..g.oh * g.ow];
            for oy in 0..g.oh {
                let grow = &gout[oy * g.ow..][..g.ow];
                for ky in 0..g.kh {
                    let Some(iy) = g.row(oy, ky) else { continue };
                    let xrow = &xin[iy * g.w..][..g.w];
                    let gxrow = &mut gxin[iy * g.w..][..g.w];
                    for kx in 0..g.kw {
                        let wv = kc[ky * g.kw + kx];
                        let mut acc = 0.0;
                        for ox in col_ranges[kx].clone() {
                            let ix = ox * g.stride + kx - g.pw;
                            acc += grow[ox] * xrow[ix];
                            gxrow[ix] += wv * grow[ox];
                        }
                        gkc[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    (gx, gk)
}

/// 1×1 convolution: `out[n,o,p] = b[o] + Σ_i k[o,i]·x[n,i,p]`.
pub fn pointwise_forward(
    n: usize,
    cin: usize,
    cout: usize,
    hw: usize,
    x: &[f64],
    k: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; n * cout * hw];
    for s in 0..n {
        let xs = &x[s * cin * hw..][..cin * hw];
        for o in 0..cout {
            let orow = &mut out[(s * cout + o) * hw..][..hw];
            orow.fill(b[o]);
            for i in 0..cin {
                let kv = k[o * cin + i];
                if kv == 0.0 {
                    continue;
                }
                let xrow = &xs[i * hw..][..hw];
                for (ov, xv) in orow.iter_mut().zip(xrow) {
                    *ov += kv * xv;
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_kernel, grad_bias)`.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_backward(
    n: usize,
    cin: usize,
    cout: usize,
    hw: usize,
    x: &[f64],
    k: &[f64],
    go: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; cout];
    for s in 0..n {
        let xs = &x[s * cin * hw..][..cin * hw];
        let gxs = &mut gx[s * cin * hw..][..cin * hw];
        for o in 0..cout {
            let grow = &go[(s * cout + o) * hw..][..hw];
            gb[o] += grow.iter().sum::<f64>();
            for i in 0..cin {
                let xrow = &xs[i * hw..][..hw];
                gk[o * cin + i] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                let kv = k[o * cin + i];
                let gxrow = &mut gxs[i * hw..][..hw];
                for (gv, g) in gxrow.iter_mut().zip(grow) {
                    *gv += kv * g;
                }
            }
        }
    }
    (gx, gk, gb)
}

/// Saved statistics from a normalization forward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    /// One entry per normalization group (per sample and group for group
    /// norm, per channel for batch norm).
    pub inv_std: Vec<f64>,
}

/// Group normalization followed by a per-channel affine map.
pub fn group_norm_forward(
    dims: [usize; 4],
    groups: usize,
    eps: f64,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, NormCache) {
    let [n, c, h, w] = dims;
    let cg = c / groups;
    let len = cg * h * w;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n * groups];
    for s in 0..n {
        for g in 0..groups {
            let off = (s * c + g * cg) * h * w;
            let seg = &x[off..off + len];
            let mean = seg.iter().sum::<f64>() / len as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[s * groups + g] = is;
            for (j, v) in seg.iter().enumerate() {
                let ch = g * cg + j / (h * w);
                let xh = (v - mean) * is;
                xhat[off + j] = xh;
                y[off + j] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn group_norm_backward(
    dims: [usize; 4],
    groups: usize,
    cache: &NormCache,
    gamma: &[f64],
    go: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dims;
    let cg = c / groups;
    let hw = h * w;
    let len = cg * hw;
    let mut gx = vec![0.0; go.len()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for s in 0..n {
        for g in 0..groups {
            let off = (s * c + g * cg) * hw;
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for j in 0..len {
                let ch = g * cg + j / hw;
                let gov = go[off + j];
                let xh = cache.xhat[off + j];
                gg[ch] += gov * xh;
                gb[ch] += gov;
                let d = gov * gamma[ch];
                mean_d += d;
                mean_dx += d * xh;
            }
            mean_d /= len as f64;
            mean_dx /= len as f64;
            let is = cache.inv_std[s * groups + g];
            for j in 0..len {
                let ch = g * cg + j / hw;
                let d = go[off + j] * gamma[ch];
                gx[off + j] = is * (d - mean_d - cache.xhat[off + j] * mean_dx);
            }
        }
    }
    (gx, gg, gb)
}

/// Per-channel mean and biased variance over `(batch, height, width)`.
pub fn channel_moments(dims: [usize; 4], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x[(b * c + ch) * hw..][..hw].iter().sum::<f64>();
        }
        let m = s / count;
        let mut v = 0.0;
        for b in 0..n {
            v += x[(b * c + ch) * hw..][..hw]
                .iter()
                .map(|t| (t - m) * (t - m))
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}

/// Batch normalization with the given per-channel statistics.
pub fn batch_norm_forward(
    dims: [usize; 4],
    eps: f64,
    x: &[f64],
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, NormCache) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for j in off..off + hw {
                let xh = (x[j] - mean[ch]) * inv_std[ch];
                xhat[j] = xh;
                y[j] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Backward of batch normalization. With `batch_stats` the statistics are
/// treated as functions of `x`; otherwise they are constants (inference).
pub fn batch_norm_backward(
    dims: [usize; 4],
    batch_stats: bool,
    cache: &NormCache,
    gamma: &[f64],
    go: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut gx = vec![0.0; go.len()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for ch in 0..c {
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for j in off..off + hw {
                gg[ch] += go[j] * cache.xhat[j];
                gb[ch] += go[j];
                let d = go[j] * gamma[ch];
                mean_d += d;
                mean_dx += d * cache.xhat[j];
            }
        }
        mean_d /= count;
        mean_dx /= count;
        let is = cache.inv_std[ch];
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for j in off..off + hw {
                let d = go[j] * gamma[ch];
                gx[j] = if batch_stats {
                    is * (d - mean_d - cache.xhat[j] * mean_dx)
                } else {
                    is * d
                };
            }
        }
    }
    (gx, gg, gb)
}

const GELU_K: f64 = 0.044_715;

/// Tanh approximation of `x·Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = (2.0 / PI).sqrt() * (x + GELU_K * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let s = (2.0 / PI).sqrt();
    let u = s * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_K * x * x)
}

/// Source index pair and blend weight for one output coordinate under the
/// align-corners convention: output endpoints sample input endpoints.
#[derive(Clone, Copy, Debug)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub fn align_corners_taps(input: usize, output: usize) -> Vec<Tap> {
    (0..output)
        .map(|o| {
            let src = if output > 1 {
                o as f64 * (input - 1) as f64 / (output - 1) as f64
            } else {
                0.0
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

pub fn bilinear_forward(dims: [usize; 4], oh: usize, ow: usize, x: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = dims;
    let ty = align_corners_taps(h, oh);
    let tx = align_corners_taps(w, ow);
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let xin = &x[plane * h * w..][..h * w];
        let o = &mut out[plane * oh * ow..][..oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &xin[a.lo * w..][..w];
            let r1 = &xin[a.hi * w..][..w];
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.lo] * (1.0 - b.frac) + r0[b.hi] * b.frac;
                let bot = r1[b.lo] * (1.0 - b.frac) + r1[b.hi] * b.frac;
                o[oy * ow + ox] = top * (1.0 - a.frac) + bot * a.frac;
            }
        }
    }
    out
}

/// Transpose of [`bilinear_forward`].
pub fn bilinear_backward(dims: [usize; 4], oh: usize, ow: usize, go: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = dims;
    let ty = align_corners_taps(h, oh);
    let tx = align_corners_taps(w, ow);
    let mut gx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let g = &go[plane * oh * ow..][..oh * ow];
        let gi = &mut gx[plane * h * w..][..h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                gi[a.lo * w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                gi[a.lo * w + b.hi] += v * (1.0 - a.frac) * b.frac;
                gi[a.hi * w + b.lo] += v * a.frac * (1.0 - b.frac);
                gi[a.hi * w + b.hi] += v * a.frac * b.frac;
            }
        }
    }
    gx
}
