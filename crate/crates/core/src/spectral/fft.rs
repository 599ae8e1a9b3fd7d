//! Complex FFT: iterative radix-2 for powers of two, Bluestein's chirp-z
//! for every other length.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Precomputed tables for one transform length.
#[derive(Clone, Debug)]
pub struct FftPlan {
    len: usize,
    kind: PlanKind,
}

#[derive(Clone, Debug)]
enum PlanKind {
    Trivial,
    Radix2 {
        twiddles: Vec<Complex64>,
        bitrev: Vec<usize>,
    },
    Bluestein {
        chirp: Vec<Complex64>,
        /// Transform of the conjugate chirp filter at the padded length.
        filter: Vec<Complex64>,
        inner: Box<FftPlan>,
    },
}

fn expi(theta: f64) -> Complex64 {
    Complex64::new(theta.cos(), theta.sin())
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "FFT length must be at least 1");
        let kind = if len == 1 {
            PlanKind::Trivial
        } else if len.is_power_of_two() {
            let bits = len.trailing_zeros();
            let bitrev = (0..len)
                .map(|i| i.reverse_bits() >> (usize::BITS - bits))
                .collect();
            let twiddles = (0..len / 2)
                .map(|k| expi(-2.0 * PI * k as f64 / len as f64))
                .collect();
            PlanKind::Radix2 { twiddles, bitrev }
        } else {
            let m = (2 * len - 1).next_power_of_two();
            // k² mod 2n keeps the chirp phase small for large k.
            let chirp: Vec<Complex64> = (0..len)
                .map(|k| {
                    let k2 = (k * k) % (2 * len);
                    expi(-PI * k2 as f64 / len as f64)
                })
                .collect();
            let mut filter = vec![Complex64::new(0.0, 0.0); m];
            filter[0] = chirp[0].conj();
            for k in 1..len {
                filter[k] = chirp[k].conj();
                filter[m - k] = chirp[k].conj();
            }
            let inner = FftPlan::new(m);
            inner.forward(&mut filter);
            PlanKind::Bluestein {
                chirp,
                filter,
                inner: Box::new(inner),
            }
        };
        Self { len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.kind {
            PlanKind::Trivial => {}
            PlanKind::Radix2 { twiddles, bitrev } => radix2(buf, twiddles, bitrev),
            PlanKind::Bluestein {
                chirp,
                filter,
                inner,
            } => {
                let m = filter.len();
                let mut a = vec![Complex64::new(0.0, 0.0); m];
                for (k, (ak, x)) in a.iter_mut().zip(buf.iter()).enumerate() {
                    *ak = x * chirp[k];
                }
                inner.forward(&mut a);
                for (ak, f) in a.iter_mut().zip(filter) {
                    *ak *= f;
                }
                inner.inverse(&mut a);
                for (k, x) in buf.iter_mut().enumerate() {
                    *x = a[k] * chirp[k];
                }
            }
        }
    }

    /// In-place inverse transform including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|v| *v = v.conj());
        self.forward(buf);
        let scale = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|v| *v = v.conj() * scale);
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64], bitrev: &[usize]) {
    let n = buf.len();
    for (i, &j) in bitrev.iter().enumerate() {
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut half = 1;
    while half < n {
        let step = n / (2 * half);
        for start in (0..n).step_by(2 * half) {
            for k in 0..half {
                let t = twiddles[k * step] * buf[start + k + half];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        half *= 2;
    }
}

/// Forward transform of any length.
pub fn fft1d(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    FftPlan::new(x.len()).forward(&mut buf);
    buf
}

/// Inverse transform with `1/N` normalization.
pub fn ifft1d(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    FftPlan::new(x.len()).inverse(&mut buf);
    buf
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
    fn impulse_and_constant() {
        let imp = [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        assert!(close(&fft1d(&imp), &[c(1.0, 0.0); 4]));
        let ones = [c(1.0, 0.0); 4];
        assert!(close(
            &fft1d(&ones),
            &[c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]
        ));
        let shifted = [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        assert!(close(
            &fft1d(&shifted),
            &[c(1.0, 0.0), c(0.0, -1.0), c(-1.0, 0.0), c(0.0, 1.0)]
        ));
    }

    #[test]
    fn bluestein_constant_length_seven() {
        let ones = [c(1.0, 0.0); 7];
        let out = fft1d(&ones);
        assert!((out[0] - c(7.0, 0.0)).norm() < 1e-12);
        assert!(out[1..].iter().all(|v| v.norm() < 1e-12));
    }
}
