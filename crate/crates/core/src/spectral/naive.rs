//! Direct O(N²) transforms used as oracles for the fast paths.
//!
//! Nothing here shares code with [`super::fft`] or the half-spectrum
//! routines: every exponential is evaluated from scratch and the full
//! complex spectrum is kept.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::AxisPair;
use crate::tensor::Tensor;

/// `X[k] = Σ_n x[n]·exp(−2πi·kn/N)`.
pub fn dft1d_naive(x: &[Complex64]) -> Vec<Complex64> {
    dft_direct(x, -1.0)
}

/// Inverse of [`dft1d_naive`], including the `1/N` factor.
pub fn idft1d_naive(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len() as f64;
    dft_direct(x, 1.0).into_iter().map(|v| v / n).collect()
}

fn dft_direct(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| {
                    let theta = sign * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                    v * Complex64::new(theta.cos(), theta.sin())
                })
                .sum()
        })
        .collect()
}

/// Dense complex array over the same `(batch, C, H, W)` axes as a tensor.
#[derive(Clone, Debug)]
pub struct FullSpectrum {
    pub dims: [usize; 4],
    pub data: Vec<Complex64>,
}

fn strides(dims: [usize; 4]) -> [usize; 4] {
    [dims[1] * dims[2] * dims[3], dims[2] * dims[3], dims[3], 1]
}

fn along_axis(
    dims: [usize; 4],
    data: &mut [Complex64],
    axis: usize,
    f: impl Fn(&[Complex64]) -> Vec<Complex64>,
) {
    let st = strides(dims);
    let len = dims[axis];
    let total: usize = dims.iter().product();
    for start in 0..total {
        // Visit each line once: from elements whose coordinate on `axis` is 0.
        if !(start / st[axis]).is_multiple_of(len) {
            continue;
        }
        let line: Vec<Complex64> = (0..len).map(|i| data[start + i * st[axis]]).collect();
        for (i, v) in f(&line).into_iter().enumerate() {
            data[start + i * st[axis]] = v;
        }
    }
}

/// Full complex 2D DFT of a real tensor over `axes`.
pub fn dft2_naive(x: &Tensor, axes: AxisPair) -> FullSpectrum {
    let dims = x.dims4("dft2_naive").expect("rank-4 input");
    let mut data: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let (a, b) = axes.tensor_axes();
    along_axis(dims, &mut data, a, dft1d_naive);
    along_axis(dims, &mut data, b, dft1d_naive);
    FullSpectrum { dims, data }
}

/// Inverse of [`dft2_naive`], returning the complex result.
pub fn idft2_naive(s: &FullSpectrum, axes: AxisPair) -> Vec<Complex64> {
    let mut data = s.data.clone();
    let (a, b) = axes.tensor_axes();
    along_axis(s.dims, &mut data, a, idft1d_naive);
    along_axis(s.dims, &mut data, b, idft1d_naive);
    data
}

/// Reference for spectral modulation: full DFT, product with the weight
/// mirrored onto the discarded half by conjugate symmetry, full inverse,
/// real part.
///
/// `w` holds one real value per half-spectrum bin and may have batch extent
/// 1 (shared across the batch).
pub fn modulate_naive(x: &Tensor, w: &Tensor, axes: AxisPair) -> Tensor {
    let dims = x.dims4("modulate_naive").expect("rank-4 input");
    let mut spec = dft2_naive(x, axes);
    let (a, b) = axes.tensor_axes();
    let (ni, nj) = (dims[a], dims[b]);
    let mut wdims = dims;
    wdims[b] = nj / 2 + 1;
    let wdata = w.data();
    let wb = w.shape()[0];
    let wst = strides(wdims);
    let st = strides(dims);
    let total: usize = dims.iter().product();
    for (flat, v) in spec.data.iter_mut().enumerate() {
        let mut idx = [0usize; 4];
        for ax in 0..4 {
            idx[ax] = (flat / st[ax]) % dims[ax];
        }
        let (i, j) = (idx[a], idx[b]);
        let (si, sj) = if j <= nj / 2 {
            (i, j)
        } else {
            ((ni - i) % ni, nj - j)
        };
        let mut widx = idx;
        widx[0] = if wb == 1 { 0 } else { idx[0] };
        widx[a] = si;
        widx[b] = sj;
        let off: usize = (0..4).map(|ax| widx[ax] * wst[ax]).sum();
        *v *= wdata[off];
    }
    debug_assert_eq!(spec.data.len(), total);
    let out = idft2_naive(&spec, axes);
    Tensor::new(&dims, out.into_iter().map(|v| v.re).collect()).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &[Complex64], b: &[Complex64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-12)
    }

    #[test]
    fn textbook_vectors() {
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        assert!(close(&dft1d_naive(&[one, z, z, z]), &[one; 4]));
        assert!(close(&dft1d_naive(&[one; 4]), &[c(4.0, 0.0), z, z, z]));
        assert!(close(
            &dft1d_naive(&[z, one, z, z]),
            &[one, c(0.0, -1.0), c(-1.0, 0.0), c(0.0, 1.0)]
        ));
    }

    #[test]
    fn inverse_round_trip() {
        let x: Vec<Complex64> = (0..5).map(|i| c(i as f64, -(i as f64) * 0.5)).collect();
        assert!(close(&idft1d_naive(&dft1d_naive(&x)), &x));
    }
}
