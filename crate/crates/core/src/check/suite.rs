//! Runnable oracle suites behind `mew fftcheck` and `mew gradcheck`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grad::{check_inputs, check_params, project, GradCheckOptions, GradReport};
use crate::error::Result;
use crate::metrics::SegmentationMask;
use crate::mew::{Branches, MewConfig, Mewb};
use crate::nn::{Builder, NormKind, GROUPS, NORM_EPS};
use crate::spectral::fft::{fft1d, ifft1d};
use crate::spectral::naive::{dft1d_naive, dft2_naive, idft1d_naive, modulate_naive};
use crate::spectral::{irdft2_axes, rdft2_axes, spectral_modulate, spectral_modulate_op, AxisPair};
use crate::tensor::{Graph, ParamStore, Session, Tensor, Var};
use crate::train::{bce_dice_loss, LossWeights};
use crate::unet::{MewUnet, NetworkConfig};

/// One named check: the measured error and the bound it must stay under.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub error: f64,
    pub tol: f64,
}

impl CheckLine {
    pub fn new(name: impl Into<String>, error: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            error,
            tol,
        }
    }

    pub fn passed(&self) -> bool {
        self.error < self.tol
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\terr={:.3e}\ttol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tol
        )
    }
}

fn cvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn inf_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    d / inf_norm(b).max(f64::MIN_POSITIVE)
}

pub const FFT_TOL: f64 = 1e-10;

/// FFT against the direct DFT for every length `1..=max_len`, `trials`
/// random inputs each, plus Parseval and round-trip identities for the 1D
/// and axis-pair real transforms.
pub fn fft_suite(max_len: usize, trials: usize, seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fwd, mut inv, mut trip, mut parseval) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for n in 1..=max_len {
        for _ in 0..trials {
            let x = cvec(&mut rng, n);
            let fx = fft1d(&x);
            fwd = fwd.max(rel_diff(&fx, &dft1d_naive(&x)));
            inv = inv.max(rel_diff(&ifft1d(&x), &idft1d_naive(&x)));
            trip = trip.max(rel_diff(&ifft1d(&fx), &x));
            let ex: f64 = x.iter().map(|z| z.norm_sqr()).sum();
            let ef: f64 = fx.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
            parseval = parseval.max((ex - ef).abs() / ex);
        }
    }
    let mut lines = vec![
        CheckLine::new(format!("fft1d vs direct DFT, n=1..{max_len} x {trials}"), fwd, FFT_TOL),
        CheckLine::new(format!("ifft1d vs direct inverse, n=1..{max_len} x {trials}"), inv, FFT_TOL),
        CheckLine::new("ifft1d(fft1d(x)) = x", trip, FFT_TOL),
        CheckLine::new("1D Parseval", parseval, FFT_TOL),
    ];

    let shapes = [[1, 2, 6, 6], [2, 4, 8, 8], [2, 3, 5, 7], [1, 5, 4, 9]];
    for axes in AxisPair::ALL {
        let (mut half, mut energy, mut back) = (0.0f64, 0.0f64, 0.0f64);
        for dims in shapes {
            let x = Tensor::uniform(&dims, -1.0, 1.0, &mut rng);
            let s = rdft2_axes(&x, axes)?;
            let full = dft2_naive(&x, axes);
            let (_, b) = axes.tensor_axes();
            let hst = [s.shape[1] * s.shape[2] * s.shape[3], s.shape[2] * s.shape[3], s.shape[3], 1];
            let fst = [dims[1] * dims[2] * dims[3], dims[2] * dims[3], dims[3], 1];
            let mut worst = 0.0f64;
            for (flat, v) in s.data.iter().enumerate() {
                let idx: Vec<usize> = (0..4).map(|a| (flat / hst[a]) % s.shape[a]).collect();
                let f: usize = (0..4).map(|a| idx[a] * fst[a]).sum();
                worst = worst.max((v - full.data[f]).norm());
            }
            debug_assert!(s.shape[b] == dims[b] / 2 + 1);
            half = half.max(worst / inf_norm(&full.data));
            let ex: f64 = x.data().iter().map(|v| v * v).sum();
            energy = energy.max((s.energy() - ex).abs() / ex);
            let (a, b) = axes.tensor_axes();
            let y = irdft2_axes(&s, axes, (dims[a], dims[b]))?;
            back = back.max(y.max_abs_diff(&x));
        }
        let n = axes.name();
        lines.push(CheckLine::new(format!("rdft2[{n}] vs direct 2D DFT"), half, FFT_TOL));
        lines.push(CheckLine::new(format!("rdft2[{n}] Parseval"), energy, FFT_TOL));
        lines.push(CheckLine::new(format!("irdft2[{n}](rdft2(x)) = x"), back, FFT_TOL));
    }
    Ok(lines)
}

pub const MODULATION_TOL: f64 = 1e-9;
pub const IDENTITY_TOL: f64 = 1e-10;

/// Half-spectrum modulation against the full-spectrum oracle, and the unit
/// weight identity.
pub fn modulation_suite(seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    for axes in AxisPair::ALL {
        let (mut diff, mut ident) = (0.0f64, 0.0f64);
        for dims in [[1, 2, 6, 6], [2, 4, 8, 8]] {
            let x = Tensor::uniform(&dims, -1.0, 1.0, &mut rng);
            let mut wshape = axes.half_shape(dims);
            for wb in [1, dims[0]] {
                wshape[0] = wb;
                let w = Tensor::uniform(&wshape, -2.0, 2.0, &mut rng);
                let fast = spectral_modulate(&x, &w, axes)?;
                diff = diff.max(fast.max_abs_diff(&modulate_naive(&x, &w, axes)));
            }
            wshape[0] = 1;
            let ones = Tensor::full(&wshape, 1.0);
            ident = ident.max(spectral_modulate(&x, &ones, axes)?.max_abs_diff(&x));
        }
        let n = axes.name();
        lines.push(CheckLine::new(format!("modulate[{n}] vs full-spectrum oracle"), diff, MODULATION_TOL));
        lines.push(CheckLine::new(format!("modulate[{n}] with w=1 is identity"), ident, IDENTITY_TOL));
    }
    Ok(lines)
}

pub const OP_GRAD_TOL: f64 = 1e-4;
pub const NETWORK_GRAD_TOL: f64 = 1e-3;
/// Finite-difference step for whole blocks and the network. Their deep
/// generator parameters have gradients near 1e-4, where a 1e-5 step loses
/// several digits to round-off.
pub const COMPOSITE_STEP: f64 = 1e-4;
/// Entries sampled from each parameter tensor in the end-to-end check.
pub const NETWORK_ENTRIES_PER_TENSOR: usize = 8;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn worst(name: &str, reports: &[GradReport], tol: f64) -> CheckLine {
    let e = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    CheckLine::new(format!("{name} ({checked} entries)"), e, tol)
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(String, Vec<Tensor>, OpFn)> {
    let x = [2, 4, 5, 6];
    let mut cases: Vec<(String, Vec<Tensor>, OpFn)> = vec![
        ("add".into(), vec![rand_t(rng, &x), rand_t(rng, &x)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("mul".into(), vec![rand_t(rng, &x), rand_t(rng, &x)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale".into(), vec![rand_t(rng, &x)], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("slice_channels".into(), vec![rand_t(rng, &x)], Box::new(|g, v| g.slice_channels(v[0], 1, 2))),
        (
            "split/concat".into(),
            vec![rand_t(rng, &x)],
            Box::new(|g, v| {
                let mut parts = g.split_channels(v[0], 4)?;
                parts.reverse();
                let y = g.concat_channels(&parts)?;
                g.mul(y, y)
            }),
        ),
        ("gelu".into(), vec![rand_t(rng, &x).map(|v| 3.0 * v)], Box::new(|g, v| Ok(g.gelu(v[0])))),
        (
            "bilinear up".into(),
            vec![rand_t(rng, &[2, 3, 3, 5])],
            Box::new(|g, v| g.bilinear_interpolate(v[0], 7, 6)),
        ),
        (
            "bilinear down".into(),
            vec![rand_t(rng, &[1, 2, 8, 8])],
            Box::new(|g, v| g.bilinear_interpolate(v[0], 3, 5)),
        ),
        (
            "conv_pointwise".into(),
            vec![rand_t(rng, &x), rand_t(rng, &[3, 4]), rand_t(rng, &[3])],
            Box::new(|g, v| g.conv_pointwise(v[0], v[1], v[2])),
        ),
    ];
    for (kh, kw, stride) in [(3, 3, 1), (3, 3, 2), (1, 3, 1), (3, 1, 1)] {
        cases.push((
            format!("conv_depthwise {kh}x{kw}/{stride}"),
            vec![rand_t(rng, &x), rand_t(rng, &[4, kh, kw])],
            Box::new(move |g, v| g.conv_depthwise(v[0], v[1], stride, (kh / 2, kw / 2))),
        ));
    }
    for groups in [2, GROUPS] {
        cases.push((
            format!("group_norm g={groups}"),
            vec![rand_t(rng, &x), rand_t(rng, &[4]), rand_t(rng, &[4])],
            Box::new(move |g, v| g.group_norm(v[0], groups, v[1], v[2], NORM_EPS)),
        ));
    }
    cases.push((
        "batch_norm (batch statistics)".into(),
        vec![rand_t(rng, &x), rand_t(rng, &[4]), rand_t(rng, &[4])],
        Box::new(|g, v| Ok(g.batch_norm(v[0], v[1], v[2], NORM_EPS, None)?.0)),
    ));
    let (rm, rv): (Vec<f64>, Vec<f64>) = (0..4).map(|_| (rng.random_range(-0.5..0.5), rng.random_range(0.5..2.0))).unzip();
    cases.push((
        "batch_norm (running statistics)".into(),
        vec![rand_t(rng, &x), rand_t(rng, &[4]), rand_t(rng, &[4])],
        Box::new(move |g, v| Ok(g.batch_norm(v[0], v[1], v[2], NORM_EPS, Some((&rm, &rv)))?.0)),
    ));
    for axes in AxisPair::ALL {
        let dims = [2, 4, 6, 5];
        let mut ws = axes.half_shape(dims);
        for wb in [1, 2] {
            ws[0] = wb;
            cases.push((
                format!("spectral_modulate[{}] w batch {wb}", axes.name()),
                vec![rand_t(rng, &dims), rand_t(rng, &ws)],
                Box::new(move |g, v| spectral_modulate_op(g, v[0], v[1], axes)),
            ));
        }
    }
    cases
}

/// Reverse-mode gradients against central differences for every primitive
/// op, the loss, one MEWB per norm kind, and (with `network`) a tiny
/// end-to-end MEW-UNet.
pub fn grad_suite(network: bool, seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let mut lines = Vec::new();
    for (i, (name, inputs, f)) in op_cases(&mut rng).into_iter().enumerate() {
        let reports = check_inputs(
            &inputs,
            |g, v| {
                let y = f(g, v)?;
                project(g, y, seed ^ i as u64)
            },
            &opts,
        )?;
        lines.push(worst(&name, &reports, OP_GRAD_TOL));
    }
    // `sum` reduces to rank 0 itself.
    let reports = check_inputs(&[rand_t(&mut rng, &[2, 3, 4, 4])], |g, v| {
        let y = g.mul(v[0], v[0])?;
        Ok(g.sum(y))
    }, &opts)?;
    lines.push(worst("sum", &reports, OP_GRAD_TOL));

    for (k, weights) in [(2, LossWeights::default()), (3, LossWeights { ce: 0.3, dice: 1.1 })] {
        let gt = random_mask(&mut rng, 2, 4, 4, k);
        let z = Tensor::uniform(&[2, k, 4, 4], -2.0, 2.0, &mut rng);
        let reports = check_inputs(&[z], |g, v| bce_dice_loss(g, v[0], &gt, weights), &opts)?;
        lines.push(worst(&format!("bce_dice_loss K={k}"), &reports, OP_GRAD_TOL));
    }

    let composite = GradCheckOptions {
        step: COMPOSITE_STEP,
        ..opts
    };
    for norm in [NormKind::Group, NormKind::Batch] {
        let cfg = MewConfig {
            norm,
            ..MewConfig::new(8, 6, 6)
        };
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, seed);
        let block = Mewb::new(&mut b, "mewb", &cfg)?;
        let input = store.add("input", rand_t(&mut rng, &[2, 8, 6, 6]), true);
        let reports = check_params(
            &store,
            |s: &mut Session| {
                let x = s.param(input);
                let y = block.forward(s, x)?;
                project(&mut s.graph, y, seed)
            },
            &composite,
        )?;
        lines.push(worst(&format!("MEWB {norm}norm, all parameters and input"), &reports, OP_GRAD_TOL));
    }

    if network {
        let sampled = GradCheckOptions {
            max_entries: Some(NETWORK_ENTRIES_PER_TENSOR),
            ..composite
        };
        lines.push(network_check(seed, &sampled)?);
    }
    Ok(lines)
}

fn random_mask(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, k: usize) -> SegmentationMask {
    let labels = (0..b * h * w).map(|_| rng.random_range(0..k as u16)).collect();
    SegmentationMask::new(b, h, w, labels).expect("consistent extents")
}

/// Configuration of the end-to-end check: 16×16 input, channels
/// `{4, 8, 16, 32, 64}`, one MEWB per stage.
pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        stage_channels: [4, 8, 16, 32, 64],
        mewb_counts: [1, 1, 1, 1],
        branches: Branches::ALL,
        ..NetworkConfig::standard(3, 2, 16, 16)
    }
}

fn network_check(seed: u64, opts: &GradCheckOptions) -> Result<CheckLine> {
    let cfg = tiny_network();
    let net = MewUnet::build(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Tensor::uniform(&[2, 3, 16, 16], 0.0, 1.0, &mut rng);
    let gt = random_mask(&mut rng, 2, 16, 16, 2);
    let reports = check_params(
        &net.params,
        |s| {
            let xv = s.graph.constant(x.clone());
            let logits = net.forward(s, xv)?;
            bce_dice_loss(&mut s.graph, logits, &gt, LossWeights::default())
        },
        opts,
    )?;
    Ok(worst("end-to-end MEW-UNet 16x16, every parameter tensor", &reports, NETWORK_GRAD_TOL))
}
