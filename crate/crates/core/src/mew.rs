//! The multi-axis external weights mixer and the transformer-style block
//! built around it.
//!
//! The mixer splits its input into four channel groups. Groups one to three
//! are filtered in the frequency domain over the (H, W), (C, W) and (C, H)
//! axis pairs with real weights produced by an [`ExternalWeight`]
//! generator; group four goes through a 3×3 depthwise convolution. The
//! results are concatenated and the mixer input is added back.

use serde::{Deserialize, Serialize};

use crate::error::{MewError, Result};
use crate::nn::{Builder, Depthwise, InvertedResidual, Norm, NormKind, Pointwise};
use crate::spectral::{spectral_modulate_op, AxisPair};
use crate::tensor::{ParamId, Session, Var};

/// Which of the four mixer branches are active. A disabled branch passes
/// its channel group through unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branches {
    pub hw: bool,
    pub cw: bool,
    pub ch: bool,
    pub dw: bool,
}

impl Default for Branches {
    fn default() -> Self {
        Self::ALL
    }
}

impl Branches {
    pub const ALL: Branches = Branches {
        hw: true,
        cw: true,
        ch: true,
        dw: true,
    };
    pub const NONE: Branches = Branches {
        hw: false,
        cw: false,
        ch: false,
        dw: false,
    };

    pub fn spectral(self, axes: AxisPair) -> bool {
        match axes {
            AxisPair::HW => self.hw,
            AxisPair::CW => self.cw,
            AxisPair::CH => self.ch,
        }
    }

    /// Parses a comma-separated list such as `hw,cw,ch,dw`. `none` or an
    /// empty string disables everything.
    pub fn parse(s: &str) -> Result<Self> {
        let mut b = Branches::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "hw" => b.hw = true,
                "cw" => b.cw = true,
                "ch" => b.ch = true,
                "dw" => b.dw = true,
                "none" => {}
                other => {
                    return Err(MewError::Config(format!(
                        "unknown branch `{other}` (expected hw, cw, ch, dw)"
                    )))
                }
            }
        }
        Ok(b)
    }
}

impl std::fmt::Display for Branches {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = [
            (self.hw, "hw"),
            (self.cw, "cw"),
            (self.ch, "ch"),
            (self.dw, "dw"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MewConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub branches: Branches,
    pub norm: NormKind,
    /// Extent of the learnable base tensor along each interpolated axis,
    /// clamped to the target extent.
    pub base_extent: usize,
    pub ffn_expansion: usize,
}

impl MewConfig {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            branches: Branches::ALL,
            norm: NormKind::Group,
            base_extent: 16,
            ffn_expansion: 4,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.channels.is_multiple_of(4) {
            return Err(MewError::Indivisible {
                op: "mew",
                channels: self.channels,
                parts: 4,
            });
        }
        if self.height == 0 || self.width == 0 || self.base_extent == 0 || self.ffn_expansion == 0 {
            return Err(MewError::InvalidArgument(format!(
                "mew extents must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

pub const GENERATOR_BLOCKS: usize = 3;

/// Learnable base tensor, bilinear resize to the half-spectrum extents, then
/// a stack of inverted residual blocks (2D for the (H, W) pair, 1D along
/// the reduced frequency axis otherwise).
#[derive(Clone, Debug)]
pub struct ExternalWeight {
    pub axes: AxisPair,
    pub base: ParamId,
    pub blocks: Vec<InvertedResidual>,
    /// Realized weight shape `(1, c, h, w)`.
    pub target: [usize; 4],
}

impl ExternalWeight {
    pub fn new(
        b: &mut Builder,
        name: &str,
        axes: AxisPair,
        channels: usize,
        height: usize,
        width: usize,
        base_extent: usize,
    ) -> Self {
        let target = axes.half_shape([1, channels, height, width]);
        let base_shape = [
            1,
            channels,
            base_extent.min(target[2]),
            base_extent.min(target[3]),
        ];
        let base = b.constant(format!("{name}.base"), &base_shape, 1.0);
        let kernel = match axes {
            AxisPair::HW => (3, 3),
            AxisPair::CW => (1, 3),
            AxisPair::CH => (3, 1),
        };
        let blocks = (0..GENERATOR_BLOCKS)
            .map(|i| InvertedResidual::new(b, &format!("{name}.gen{i}"), channels, kernel))
            .collect();
        Self {
            axes,
            base,
            blocks,
            target,
        }
    }

    /// Produces the realized weight for the current parameters.
    pub fn generate(&self, s: &mut Session) -> Result<Var> {
        let base = s.param(self.base);
        let mut w = s
            .graph
            .bilinear_interpolate(base, self.target[2], self.target[3])?;
        for block in &self.blocks {
            w = block.forward(s, w)?;
        }
        Ok(w)
    }
}

/// The four-branch mixer.
#[derive(Clone, Debug)]
pub struct Mew {
    pub cfg: MewConfig,
    /// Generators for the HW, CW, CH branches; `None` when disabled.
    pub weights: [Option<ExternalWeight>; 3],
    pub dw: Option<Depthwise>,
}

impl Mew {
    pub fn new(b: &mut Builder, name: &str, cfg: &MewConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels / 4;
        let weights = AxisPair::ALL.map(|axes| {
            cfg.branches.spectral(axes).then(|| {
                ExternalWeight::new(
                    b,
                    &format!("{name}.w_{}", axes.name()),
                    axes,
                    c,
                    cfg.height,
                    cfg.width,
                    cfg.base_extent,
                )
            })
        });
        let dw = cfg
            .branches
            .dw
            .then(|| Depthwise::new(b, &format!("{name}.dw"), c, (3, 3), 1));
        Ok(Self {
            cfg: cfg.clone(),
            weights,
            dw,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let [_, c, h, w] = s.graph.value(x).dims4("mew")?;
        if c != self.cfg.channels || (h, w) != (self.cfg.height, self.cfg.width) {
            return Err(MewError::ShapeMismatch {
                op: "mew",
                lhs: vec![self.cfg.channels, self.cfg.height, self.cfg.width],
                rhs: vec![c, h, w],
            });
        }
        let parts = s.graph.split_channels(x, 4)?;
        let mut outs = Vec::with_capacity(4);
        for (part, gen) in parts.iter().zip(&self.weights) {
            outs.push(match gen {
                Some(gen) => {
                    let wv = gen.generate(s)?;
                    spectral_modulate_op(&mut s.graph, *part, wv, gen.axes)?
                }
                None => *part,
            });
        }
        outs.push(match &self.dw {
            Some(dw) => dw.forward(s, parts[3])?,
            None => parts[3],
        });
        let mixed = s.graph.concat_channels(&outs)?;
        s.graph.add(mixed, x)
    }
}

/// Pointwise expansion, GELU, pointwise projection.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub fc1: Pointwise,
    pub fc2: Pointwise,
}

impl Ffn {
    pub fn new(b: &mut Builder, name: &str, channels: usize, expansion: usize) -> Self {
        let hidden = channels * expansion;
        Self {
            fc1: Pointwise::new(b, &format!("{name}.fc1"), channels, hidden),
            fc2: Pointwise::new(b, &format!("{name}.fc2"), hidden, channels),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.fc1.forward(s, x)?;
        let h = s.graph.gelu(h);
        self.fc2.forward(s, h)
    }
}

/// `X' = MEW(Norm(X)) + X`, `Y = FFN(Norm(X')) + X'`.
#[derive(Clone, Debug)]
pub struct Mewb {
    pub norm1: Norm,
    pub mew: Mew,
    pub norm2: Norm,
    pub ffn: Ffn,
}

impl Mewb {
    pub fn new(b: &mut Builder, name: &str, cfg: &MewConfig) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(b, &format!("{name}.norm1"), cfg.norm, cfg.channels)?,
            mew: Mew::new(b, &format!("{name}.mew"), cfg)?,
            norm2: Norm::new(b, &format!("{name}.norm2"), cfg.norm, cfg.channels)?,
            ffn: Ffn::new(b, &format!("{name}.ffn"), cfg.channels, cfg.ffn_expansion),
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let n1 = self.norm1.forward(s, x)?;
        let m = self.mew.forward(s, n1)?;
        let x1 = s.graph.add(m, x)?;
        let n2 = self.norm2.forward(s, x1)?;
        let f = self.ffn.forward(s, n2)?;
        s.graph.add(f, x1)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::check::{check_params, project, GradCheckOptions};
    use crate::tensor::{ParamStore, Tensor};

    fn input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape, -1.0, 1.0, &mut rng)
    }

    fn zero_projections(store: &mut ParamStore, ew: &ExternalWeight) {
        for blk in &ew.blocks {
            let shape = store.get(blk.project.weight).value.shape().to_vec();
            store.set_value(blk.project.weight, Tensor::zeros(&shape)).unwrap();
        }
    }

    fn run(store: &ParamStore, f: impl FnOnce(&mut Session) -> Var) -> Tensor {
        let mut s = Session::new(store, false);
        let v = f(&mut s);
        s.graph.value(v).clone()
    }

    #[test]
    fn branches_parse_and_display() {
        assert_eq!(Branches::parse("hw,cw,ch,dw").unwrap(), Branches::ALL);
        assert_eq!(Branches::parse("none").unwrap(), Branches::NONE);
        let b = Branches::parse("dw, hw").unwrap();
        assert_eq!(b.to_string(), "hw,dw");
        assert!(Branches::parse("xy").is_err());
    }

    #[test]
    fn constant_base_with_identity_generator_is_constant() {
        for axes in AxisPair::ALL {
            let mut store = ParamStore::new();
            let ew = ExternalWeight::new(&mut Builder::new(&mut store, 3), "w", axes, 2, 16, 16, 16);
            zero_projections(&mut store, &ew);
            let shape = store.get(ew.base).value.shape().to_vec();
            store.set_value(ew.base, Tensor::full(&shape, 0.37)).unwrap();
            let w = run(&store, |s| ew.generate(s).unwrap());
            assert!(w.data().iter().all(|&v| (v - 0.37).abs() < 1e-15), "{axes:?}");
        }
    }

    #[test]
    fn realized_shapes_follow_half_spectrum() {
        // (C, H, W) = (8, 16, 16): branch channels 2, reduced extent 16/2+1 = 9.
        let mut store = ParamStore::new();
        let mew = Mew::new(&mut Builder::new(&mut store, 1), "m", &MewConfig::new(8, 16, 16)).unwrap();
        let expected = [[1, 2, 16, 9], [1, 2, 16, 9], [1, 2, 9, 16]];
        for (ew, want) in mew.weights.iter().zip(expected) {
            let ew = ew.as_ref().unwrap();
            let w = run(&store, |s| ew.generate(s).unwrap());
            assert_eq!(w.shape(), &want);
        }
    }

    #[test]
    fn generator_gradient_reaches_base() {
        for axes in AxisPair::ALL {
            let mut store = ParamStore::new();
            let ew = ExternalWeight::new(&mut Builder::new(&mut store, 11), "w", axes, 1, 6, 6, 3);
            let reps = check_params(
                &store,
                |s| {
                    let w = ew.generate(s)?;
                    project(&mut s.graph, w, 2)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            for r in reps {
                assert!(r.passes(1e-4), "{axes:?} {r:?}");
            }
        }
    }

    fn set_unit_filters(store: &mut ParamStore, mew: &Mew, value: f64, dw_center: f64) {
        for ew in mew.weights.iter().flatten() {
            zero_projections(store, ew);
            let shape = store.get(ew.base).value.shape().to_vec();
            store.set_value(ew.base, Tensor::full(&shape, value)).unwrap();
        }
        if let Some(dw) = &mew.dw {
            let c = mew.cfg.channels / 4;
            let mut k = vec![0.0; c * 9];
            for ch in 0..c {
                k[ch * 9 + 4] = dw_center;
            }
            store.set_value(dw.weight, Tensor::new(&[c, 3, 3], k).unwrap()).unwrap();
        }
    }

    #[test]
    fn unit_weights_and_identity_kernel_double_the_input() {
        let cfg = MewConfig::new(8, 6, 6);
        let mut store = ParamStore::new();
        let mew = Mew::new(&mut Builder::new(&mut store, 5), "m", &cfg).unwrap();
        set_unit_filters(&mut store, &mew, 1.0, 1.0);
        let x = input(&[2, 8, 6, 6], 1);
        let y = run(&store, |s| {
            let xv = s.graph.constant(x.clone());
            mew.forward(s, xv).unwrap()
        });
        assert!(y.max_abs_diff(&x.map(|v| 2.0 * v)) < 1e-9);
    }

    #[test]
    fn zero_weights_leave_only_residual() {
        let cfg = MewConfig::new(8, 6, 6);
        let mut store = ParamStore::new();
        let mew = Mew::new(&mut Builder::new(&mut store, 5), "m", &cfg).unwrap();
        set_unit_filters(&mut store, &mew, 0.0, 0.0);
        let x = input(&[1, 8, 6, 6], 2);
        let y = run(&store, |s| {
            let xv = s.graph.constant(x.clone());
            mew.forward(s, xv).unwrap()
        });
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn every_branch_changes_the_output() {
        let x = input(&[1, 8, 8, 8], 3);
        let full = {
            let mut store = ParamStore::new();
            let mew = Mew::new(&mut Builder::new(&mut store, 9), "m", &MewConfig::new(8, 8, 8)).unwrap();
            run(&store, |s| {
                let xv = s.graph.constant(x.clone());
                mew.forward(s, xv).unwrap()
            })
        };
        for drop in ["hw", "cw", "ch", "dw"] {
            let mut cfg = MewConfig::new(8, 8, 8);
            let keep: Vec<&str> = ["hw", "cw", "ch", "dw"].into_iter().filter(|b| *b != drop).collect();
            cfg.branches = Branches::parse(&keep.join(",")).unwrap();
            let mut store = ParamStore::new();
            // Same seed; parameter draws shift once a branch is removed, so
            // compare on the slice that branch owns.
            let mew = Mew::new(&mut Builder::new(&mut store, 9), "m", &cfg).unwrap();
            let y = run(&store, |s| {
                let xv = s.graph.constant(x.clone());
                mew.forward(s, xv).unwrap()
            });
            let slot = ["hw", "cw", "ch", "dw"].iter().position(|b| *b == drop).unwrap();
            let hw = 64;
            let range = slot * 2 * hw..(slot + 1) * 2 * hw;
            let diff = y.data()[range.clone()]
                .iter()
                .zip(&full.data()[range])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff > 1e-6, "disabling {drop} had no effect");
        }
    }

    #[test]
    fn mew_rejects_wrong_channels() {
        let mut store = ParamStore::new();
        let mew = Mew::new(&mut Builder::new(&mut store, 5), "m", &MewConfig::new(8, 4, 4)).unwrap();
        let mut s = Session::new(&store, false);
        let xv = s.graph.constant(Tensor::zeros(&[1, 4, 4, 4]));
        assert!(mew.forward(&mut s, xv).is_err());
        assert!(Mew::new(&mut Builder::new(&mut store, 5), "n", &MewConfig::new(6, 4, 4)).is_err());
    }

    #[test]
    fn ffn_zero_projection_and_shape() {
        let mut store = ParamStore::new();
        let ffn = Ffn::new(&mut Builder::new(&mut store, 2), "f", 32, 4);
        let y = run(&store, |s| {
            let xv = s.graph.constant(input(&[1, 32, 8, 8], 4));
            ffn.forward(s, xv).unwrap()
        });
        assert_eq!(y.shape(), &[1, 32, 8, 8]);
        store.set_value(ffn.fc2.weight, Tensor::zeros(&[32, 128])).unwrap();
        let y = run(&store, |s| {
            let xv = s.graph.constant(input(&[1, 32, 8, 8], 4));
            ffn.forward(s, xv).unwrap()
        });
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mewb_shape_and_pure_residual() {
        let cfg = MewConfig::new(32, 16, 16);
        let mut store = ParamStore::new();
        let blk = Mewb::new(&mut Builder::new(&mut store, 8), "b", &cfg).unwrap();
        let x = input(&[2, 32, 16, 16], 6);
        let y = run(&store, |s| {
            let xv = s.graph.constant(x.clone());
            blk.forward(s, xv).unwrap()
        });
        assert_eq!(y.shape(), x.shape());

        // Zero norm affine maps and FFN projection: every branch sees zeros.
        for norm in [&blk.norm1, &blk.norm2] {
            let Norm::Group { gamma, .. } = norm else { unreachable!() };
            store.set_value(*gamma, Tensor::zeros(&[32])).unwrap();
        }
        store.set_value(blk.ffn.fc2.weight, Tensor::zeros(&[32, 128])).unwrap();
        let y = run(&store, |s| {
            let xv = s.graph.constant(x.clone());
            blk.forward(s, xv).unwrap()
        });
        assert!(y.max_abs_diff(&x) < 1e-15);
    }
}
