//! 2D real Fourier transforms over axis pairs of `(batch, C, H, W)` tensors
//! and the real-weight spectral modulation built on them.
//!
//! Conventions:
//! - forward transforms are unnormalized, inverses carry `1/(I·J)`;
//! - spectra are Hermitian-reduced along the second transformed axis, which
//!   keeps `⌊J/2⌋+1` bins;
//! - batch is never transformed.

pub mod fft;
pub mod naive;

use num_complex::Complex64;

use crate::error::{MewError, Result};
use crate::tensor::CustomOp;
use crate::tensor::{Graph, Tensor, Var};
use fft::FftPlan;

pub use fft::{fft1d, ifft1d};
pub use naive::dft1d_naive;

/// Which two of `(channel, height, width)` a transform acts on. The second
/// axis of the pair is the Hermitian-reduced one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AxisPair {
    HW,
    CW,
    CH,
}

impl AxisPair {
    pub const ALL: [AxisPair; 3] = [AxisPair::HW, AxisPair::CW, AxisPair::CH];

    /// Tensor axis indices `(I, J)` in NCHW order.
    pub fn tensor_axes(self) -> (usize, usize) {
        match self {
            AxisPair::HW => (2, 3),
            AxisPair::CW => (1, 3),
            AxisPair::CH => (1, 2),
        }
    }

    /// The non-batch axis left untouched.
    pub fn untouched_axis(self) -> usize {
        match self {
            AxisPair::HW => 1,
            AxisPair::CW => 2,
            AxisPair::CH => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AxisPair::HW => "hw",
            AxisPair::CW => "cw",
            AxisPair::CH => "ch",
        }
    }

    /// Shape of the half spectrum of a tensor with shape `dims`.
    pub fn half_shape(self, dims: [usize; 4]) -> [usize; 4] {
        let (_, b) = self.tensor_axes();
        let mut out = dims;
        out[b] = dims[b] / 2 + 1;
        out
    }
}

/// Real-input 2D spectrum with the second transformed axis reduced to
/// `⌊J/2⌋+1` bins. Data is row-major over `shape`.
#[derive(Clone, Debug)]
pub struct HalfSpectrum {
    pub axes: AxisPair,
    /// Original extents `(I, J)` of the transformed axes.
    pub extents: (usize, usize),
    pub shape: [usize; 4],
    pub data: Vec<Complex64>,
}

impl HalfSpectrum {
    /// Number of full-spectrum bins represented by reduced bin index `j`.
    pub fn multiplicity(&self, j: usize) -> f64 {
        bin_multiplicity(j, self.extents.1)
    }

    /// `(1/(I·J)) Σ multiplicity·|X|²`, which equals `Σ x²` of the source.
    pub fn energy(&self) -> f64 {
        let (_, b) = self.axes.tensor_axes();
        let st = strides(self.shape);
        let nr = self.shape[b];
        let n = (self.extents.0 * self.extents.1) as f64;
        self.data
            .iter()
            .enumerate()
            .map(|(flat, v)| self.multiplicity((flat / st[b]) % nr) * v.norm_sqr())
            .sum::<f64>()
            / n
    }
}

fn bin_multiplicity(j: usize, nj: usize) -> f64 {
    if j == 0 || (nj.is_multiple_of(2) && j == nj / 2) {
        1.0
    } else {
        2.0
    }
}

fn strides(dims: [usize; 4]) -> [usize; 4] {
    [dims[1] * dims[2] * dims[3], dims[2] * dims[3], dims[3], 1]
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Real 2D DFT of `x` over `axes`.
pub fn rdft2_axes(x: &Tensor, axes: AxisPair) -> Result<HalfSpectrum> {
    let dims = x.dims4("rdft2_axes")?;
    let (a, b) = axes.tensor_axes();
    let u = axes.untouched_axis();
    let (ni, nj) = (dims[a], dims[b]);
    let nr = nj / 2 + 1;
    let sdims = axes.half_shape(dims);
    let (st, sst) = (strides(dims), strides(sdims));
    let (pi, pj) = (FftPlan::new(ni), FftPlan::new(nj));
    let src = x.data();
    let mut out = vec![ZERO; sdims.iter().product()];
    let mut row = vec![ZERO; nj];
    let mut col = vec![ZERO; ni];
    let mut plane = vec![ZERO; ni * nr];
    for bi in 0..dims[0] {
        for ui in 0..dims[u] {
            let base = bi * st[0] + ui * st[u];
            let sbase = bi * sst[0] + ui * sst[u];
            for i in 0..ni {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = Complex64::new(src[base + i * st[a] + j * st[b]], 0.0);
                }
                pj.forward(&mut row);
                plane[i * nr..(i + 1) * nr].copy_from_slice(&row[..nr]);
            }
            for j in 0..nr {
                for (i, cv) in col.iter_mut().enumerate() {
                    *cv = plane[i * nr + j];
                }
                pi.forward(&mut col);
                for (i, cv) in col.iter().enumerate() {
                    out[sbase + i * sst[a] + j * sst[b]] = *cv;
                }
            }
        }
    }
    Ok(HalfSpectrum {
        axes,
        extents: (ni, nj),
        shape: sdims,
        data: out,
    })
}

/// Inverse of [`rdft2_axes`]. The imaginary parts of the self-conjugate
/// bins along the reduced axis are dropped, so the result is the real part
/// of the full inverse transform.
pub fn irdft2_axes(s: &HalfSpectrum, axes: AxisPair, extents: (usize, usize)) -> Result<Tensor> {
    if s.axes != axes || s.extents != extents {
        return Err(MewError::InvalidArgument(format!(
            "spectrum over {:?} with extents {:?} cannot be inverted as {:?} with extents {:?}",
            s.axes, s.extents, axes, extents
        )));
    }
    let (a, b) = axes.tensor_axes();
    let u = axes.untouched_axis();
    let (ni, nj) = extents;
    let nr = nj / 2 + 1;
    if s.shape[a] != ni || s.shape[b] != nr {
        return Err(MewError::InvalidArgument(format!(
            "spectrum shape {:?} does not match extents {:?} on {:?}",
            s.shape, extents, axes
        )));
    }
    let mut dims = s.shape;
    dims[b] = nj;
    let (st, sst) = (strides(dims), strides(s.shape));
    let (pi, pj) = (FftPlan::new(ni), FftPlan::new(nj));
    let mut out = vec![0.0; dims.iter().product()];
    let mut row = vec![ZERO; nj];
    let mut col = vec![ZERO; ni];
    let mut plane = vec![ZERO; ni * nr];
    for bi in 0..dims[0] {
        for ui in 0..dims[u] {
            let base = bi * st[0] + ui * st[u];
            let sbase = bi * sst[0] + ui * sst[u];
            for j in 0..nr {
                for (i, cv) in col.iter_mut().enumerate() {
                    *cv = s.data[sbase + i * sst[a] + j * sst[b]];
                }
                pi.inverse(&mut col);
                for (i, cv) in col.iter().enumerate() {
                    plane[i * nr + j] = *cv;
                }
            }
            for i in 0..ni {
                let half = &plane[i * nr..(i + 1) * nr];
                row[0] = Complex64::new(half[0].re, 0.0);
                row[1..nr].copy_from_slice(&half[1..nr]);
                if nj % 2 == 0 {
                    row[nj / 2] = Complex64::new(half[nj / 2].re, 0.0);
                }
                for j in nr..nj {
                    row[j] = half[nj - j].conj();
                }
                pj.inverse(&mut row);
                for (j, r) in row.iter().enumerate() {
                    out[base + i * st[a] + j * st[b]] = r.re;
                }
            }
        }
    }
    Tensor::new(&dims, out)
}

fn check_weight(x: &Tensor, w: &Tensor, axes: AxisPair) -> Result<[usize; 4]> {
    let dims = x.dims4("spectral_modulate")?;
    let expected = axes.half_shape(dims);
    let ok = match w.shape() {
        [wb, rest @ ..] => (*wb == 1 || *wb == dims[0]) && rest == &expected[1..],
        _ => false,
    };
    if !ok {
        return Err(MewError::InvalidArgument(format!(
            "spectral weight for {:?} must have half-spectrum shape {:?} (batch 1 or {}), got {:?}",
            axes,
            expected,
            dims[0],
            w.shape()
        )));
    }
    Ok(dims)
}

/// `irdft2(w ⊙ rdft2(x))` with one real weight per half-spectrum bin.
///
/// `w` may have batch extent 1, in which case it is shared by every sample.
pub fn spectral_modulate(x: &Tensor, w: &Tensor, axes: AxisPair) -> Result<Tensor> {
    let dims = check_weight(x, w, axes)?;
    let (a, b) = axes.tensor_axes();
    let mut s = rdft2_axes(x, axes)?;
    let per_sample = s.data.len() / dims[0];
    let wd = w.data();
    let shared = w.shape()[0] == 1;
    for (flat, v) in s.data.iter_mut().enumerate() {
        *v *= wd[if shared { flat % per_sample } else { flat }];
    }
    irdft2_axes(&s, axes, (dims[a], dims[b]))
}

/// Gradient of `Σ g ⊙ spectral_modulate(x, w)` with respect to `w`.
fn weight_grad(x: &Tensor, g: &Tensor, w_shape: &[usize], axes: AxisPair) -> Result<Vec<f64>> {
    let xs = rdft2_axes(x, axes)?;
    let gs = rdft2_axes(g, axes)?;
    let (_, b) = axes.tensor_axes();
    let st = strides(xs.shape);
    let nr = xs.shape[b];
    let norm = (xs.extents.0 * xs.extents.1) as f64;
    let per_sample = xs.data.len() / xs.shape[0];
    let shared = w_shape[0] == 1;
    let mut out = vec![0.0; w_shape.iter().product()];
    for (flat, (xv, gv)) in xs.data.iter().zip(&gs.data).enumerate() {
        let j = (flat / st[b]) % nr;
        let val = xs.multiplicity(j) / norm * (xv * gv.conj()).re;
        out[if shared { flat % per_sample } else { flat }] += val;
    }
    Ok(out)
}

struct ModulateRule {
    axes: AxisPair,
}

impl CustomOp for ModulateRule {
    fn name(&self) -> &'static str {
        "spectral_modulate"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = Tensor::new(output.shape(), grad.to_vec()).expect("grad matches output");
        // The real-weight filter is self-adjoint, so the input gradient is
        // the same modulation applied to the incoming gradient.
        let gx = spectral_modulate(&g, w, self.axes)
            .expect("shapes validated in forward")
            .into_data();
        let gw = weight_grad(x, &g, w.shape(), self.axes).expect("shapes validated in forward");
        vec![Some(gx), Some(gw)]
    }
}

/// Records [`spectral_modulate`] in a graph.
pub fn spectral_modulate_op(g: &mut Graph, x: Var, w: Var, axes: AxisPair) -> Result<Var> {
    let out = spectral_modulate(g.value(x), g.value(w), axes)?;
    Ok(g.custom(&[x, w], out, Box::new(ModulateRule { axes })))
}
