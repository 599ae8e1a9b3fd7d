//! Label-preserving geometric augmentation: flips and quarter turns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::metrics::SegmentationMask;
use crate::tensor::Tensor;

/// Applied in order: horizontal flip, vertical flip, then `quarter_turns`
/// counter-clockwise rotations by 90°.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        hflip: false,
        vflip: false,
        quarter_turns: 0,
    };

    /// Each flip with probability 1/2, rotation uniform over four angles.
    /// Non-square extents only draw 0° or 180°.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, square: bool) -> Self {
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        let quarter_turns = if square {
            rng.random_range(0..4u8)
        } else {
            2 * rng.random_range(0..2u8)
        };
        Self {
            hflip,
            vflip,
            quarter_turns,
        }
    }

    pub fn from_seed(seed: u64, square: bool) -> Self {
        Self::draw(&mut ChaCha8Rng::seed_from_u64(seed), square)
    }

    /// Output extent for an `(h, w)` input.
    pub fn out_extent(&self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source pixel `(row, col)` for output pixel `(r, c)`.
    pub fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        // Undo the rotation first, on the flipped (h, w) grid.
        let (mut y, mut x) = match self.quarter_turns % 4 {
            0 => (r, c),
            // Counter-clockwise: out[r][c] = in[c][w - 1 - r].
            1 => (c, w - 1 - r),
            2 => (h - 1 - r, w - 1 - c),
            _ => (h - 1 - c, r),
        };
        if self.vflip {
            y = h - 1 - y;
        }
        if self.hflip {
            x = w - 1 - x;
        }
        (y, x)
    }

    fn index_map(&self, h: usize, w: usize) -> Vec<usize> {
        let (oh, ow) = self.out_extent(h, w);
        let mut map = Vec::with_capacity(oh * ow);
        for r in 0..oh {
            for c in 0..ow {
                let (y, x) = self.source(r, c, h, w);
                map.push(y * w + x);
            }
        }
        map
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        let [ch, h, w] = sample.extent();
        let (oh, ow) = self.out_extent(h, w);
        let map = self.index_map(h, w);
        let src = sample.image.data();
        let mut data = Vec::with_capacity(src.len());
        for k in 0..ch {
            let plane = &src[k * h * w..(k + 1) * h * w];
            data.extend(map.iter().map(|&i| plane[i]));
        }
        let labels = sample.mask.labels();
        Sample {
            id: sample.id.clone(),
            image: Tensor::new(&[ch, oh, ow], data).expect("same element count"),
            mask: SegmentationMask::new(1, oh, ow, map.iter().map(|&i| labels[i]).collect())
                .expect("same element count"),
        }
    }
}

/// Random flip/rotation, deterministic in `seed`.
pub fn augment(sample: &Sample, seed: u64) -> Sample {
    let [_, h, w] = sample.extent();
    Transform::from_seed(seed, h == w).apply(sample)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample(h: usize, w: usize, ch: usize) -> Sample {
        let n = h * w;
        Sample {
            id: "s".into(),
            image: Tensor::new(&[ch, h, w], (0..ch * n).map(|i| i as f64).collect()).unwrap(),
            mask: SegmentationMask::new(1, h, w, (0..n).map(|i| (i % 3) as u16).collect()).unwrap(),
        }
    }

    /// Per-pixel oracle built from elementary grid operations.
    fn oracle(grid: &[Vec<u16>], t: Transform) -> Vec<Vec<u16>> {
        let mut g = grid.to_vec();
        if t.hflip {
            g.iter_mut().for_each(|row| row.reverse());
        }
        if t.vflip {
            g.reverse();
        }
        for _ in 0..t.quarter_turns {
            // One counter-clockwise quarter turn: transpose then reverse rows.
            let (h, w) = (g.len(), g[0].len());
            let mut r = vec![vec![0; h]; w];
            for (y, row) in g.iter().enumerate() {
                for (x, &v) in row.iter().enumerate() {
                    r[w - 1 - x][y] = v;
                }
            }
            g = r;
        }
        g
    }

    #[test]
    fn identity_and_involution() {
        let s = sample(4, 4, 2);
        assert_eq!(Transform::IDENTITY.apply(&s), s);
        let h = Transform {
            hflip: true,
            ..Transform::IDENTITY
        };
        assert_eq!(h.apply(&h.apply(&s)), s);
        let q = Transform {
            quarter_turns: 1,
            ..Transform::IDENTITY
        };
        assert_eq!(q.apply(&q.apply(&q.apply(&q.apply(&s)))), s);
    }

    #[test]
    fn seeded_draws_cover_every_transform() {
        let mut seen = std::collections::HashSet::new();
        for seed in 0..400 {
            let t = Transform::from_seed(seed, true);
            seen.insert((t.hflip, t.vflip, t.quarter_turns));
            assert_eq!(t, Transform::from_seed(seed, true));
        }
        assert_eq!(seen.len(), 16);
        assert!((0..100).all(|s| Transform::from_seed(s, false).quarter_turns.is_multiple_of(2)));
    }

    proptest! {
        #[test]
        fn matches_pixel_loop_oracle(
            h in 1usize..6, w in 1usize..6,
            hflip in any::<bool>(), vflip in any::<bool>(), q in 0u8..4,
        ) {
            let t = Transform { hflip, vflip, quarter_turns: q };
            let s = sample(h, w, 2);
            let out = t.apply(&s);
            let grid: Vec<Vec<u16>> = s.mask.labels().chunks(w).map(<[u16]>::to_vec).collect();
            let want: Vec<u16> = oracle(&grid, t).concat();
            prop_assert_eq!(out.mask.labels(), &want[..]);
            // Image planes follow the same map as the mask.
            let plane1: Vec<u16> = s.image.data()[h * w..].iter().map(|&v| (v as usize - h * w) as u16).collect();
            let pgrid: Vec<Vec<u16>> = plane1.chunks(w).map(<[u16]>::to_vec).collect();
            let got1: Vec<u16> = out.image.data()[h * w..].iter().map(|&v| (v as usize - h * w) as u16).collect();
            prop_assert_eq!(got1, oracle(&pgrid, t).concat());
            // Class histogram is preserved.
            for cls in 0..3u16 {
                let count = |m: &[u16]| m.iter().filter(|&&l| l == cls).count();
                prop_assert_eq!(count(out.mask.labels()), count(s.mask.labels()));
            }
        }
    }
}
