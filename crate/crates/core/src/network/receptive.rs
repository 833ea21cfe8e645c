//! Analytic receptive fields, derived from kernel sizes, dilations, poolings
//! and image bounds (out-of-image taps read padding and carry no signal).

use crate::network::weights::{ENCODER_BLOCKS, MFPM_BRANCHES};

/// Boolean map over an `h × w` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(h: usize, w: usize) -> Self {
        Self { h, w, bits: vec![false; h * w] }
    }

    pub fn point(h: usize, w: usize, i: usize, j: usize) -> Self {
        let mut m = Self::empty(h, w);
        m.bits[i * w + j] = true;
        m
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.w + j]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn union(mut self, other: &Mask) -> Self {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        self
    }

    /// Inputs read by a 3×3 kernel with the given dilation.
    fn dilate(&self, dilation: usize) -> Self {
        let mut out = Self::empty(self.h, self.w);
        let d = dilation as isize;
        for i in 0..self.h {
            for j in 0..self.w {
                if !self.get(i, j) {
                    continue;
                }
                for du in [-d, 0, d] {
                    for dv in [-d, 0, d] {
                        let (y, x) = (i as isize + du, j as isize + dv);
                        if y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w {
                            out.bits[y as usize * self.w + x as usize] = true;
                        }
                    }
                }
            }
        }
        out
    }

    /// Inputs read by a 2×2 stride-2 pooling.
    fn unpool(&self) -> Self {
        let mut out = Self::empty(self.h * 2, self.w * 2);
        for i in 0..out.h {
            for j in 0..out.w {
                out.bits[i * out.w + j] = self.get(i / 2, j / 2);
            }
        }
        out
    }
}

/// Encoder-feature positions feeding the fusion-chain branch `idx`
/// (0 = plain 3×3, 1..=3 = dilated) at the positions in `m`.
fn branch_field(m: &Mask, idx: usize) -> Mask {
    let taps = m.dilate(MFPM_BRANCHES[idx].1);
    if idx == 0 {
        taps
    } else {
        // input is [F, previous branch]
        let prev = branch_field(&taps, idx - 1);
        taps.union(&prev)
    }
}

/// Encoder-feature positions that influence the concatenated pooling-module
/// branches (before normalisation) at `(i, j)` on an `h4 × w4` grid.
pub fn pooling_field(h4: usize, w4: usize, i: usize, j: usize) -> Mask {
    let m = Mask::point(h4, w4, i, j);
    // max-pool 3×3 branch covers the same ±1 window as the plain 3×3 conv
    let mut field = m.dilate(1);
    for idx in 0..MFPM_BRANCHES.len() {
        field = field.union(&branch_field(&m, idx));
    }
    field
}

/// Input pixels (of an `h × w` image) that can influence the pre-normalisation
/// pooling features at `(i, j)` of the quarter-resolution grid.
pub fn input_field(h: usize, w: usize, i: usize, j: usize) -> Mask {
    let mut m = pooling_field(h / 4, w / 4, i, j);
    for (b, &(_, convs)) in ENCODER_BLOCKS.iter().enumerate().rev() {
        if b < 2 {
            m = m.unpool();
        }
        for _ in 0..convs {
            m = m.dilate(1);
        }
    }
    debug_assert_eq!((m.h, m.w), (h, w));
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_contains_centre_and_is_bounded() {
        // at small sizes the image-level field already spans the whole frame
        assert_eq!(input_field(32, 32, 0, 0).count(), 32 * 32);
        let m = input_field(256, 256, 0, 0);
        // reach on the 64×64 grid: 1, 4+1, 8+5, 16+13 = 29; then six convs,
        // unpool, two convs, unpool, two convs: ((29+6)·2+1+2)·2+1+2 = 149
        assert!(m.get(0, 0) && m.get(149, 0) && m.get(0, 149));
        assert!(!m.get(150, 0) && !m.get(0, 150));
        let p = pooling_field(8, 8, 0, 0);
        // dilation 8 and 16 taps fall outside an 8×8 grid from the corner,
        // dilation 4 reaches row/col 4 and its ±1 neighbourhood
        assert!(p.get(4, 4) && p.get(5, 5) && p.get(3, 3));
        assert!(!p.get(7, 7));
    }
}
