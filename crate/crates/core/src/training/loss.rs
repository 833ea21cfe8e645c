//! Class-weighted binary cross-entropy over evaluable pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Probabilities are clamped to `[P_MIN, 1 − P_MIN]` before taking logs.
pub const P_MIN: f64 = 1e-7;

/// Ground-truth labels in CDnet convention.
pub mod gt {
    pub const STATIC: u8 = 0;
    pub const SHADOW: u8 = 50;
    pub const NON_ROI: u8 = 85;
    pub const UNKNOWN: u8 = 170;
    pub const MOVING: u8 = 255;

    pub const ALL: [u8; 5] = [STATIC, SHADOW, NON_ROI, UNKNOWN, MOVING];
}

/// How a ground-truth value is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelClass {
    Foreground,
    Background,
    Ignored,
}

pub fn classify_gt(v: u8) -> Option<LabelClass> {
    match v {
        gt::MOVING => Some(LabelClass::Foreground),
        gt::STATIC | gt::SHADOW => Some(LabelClass::Background),
        gt::NON_ROI | gt::UNKNOWN => Some(LabelClass::Ignored),
        _ => None,
    }
}

/// Per-pixel training target: foreground flag plus an evaluable flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub h: usize,
    pub w: usize,
    pub foreground: Vec<bool>,
    pub valid: Vec<bool>,
}

impl Target {
    /// `roi`, when given, marks pixels inside the region of interest.
    pub fn from_gt(h: usize, w: usize, labels: &[u8], roi: Option<&[bool]>) -> Result<Self> {
        if labels.len() != h * w || roi.is_some_and(|r| r.len() != h * w) {
            return Err(Error::Shape(format!("target maps do not match {h}x{w}")));
        }
        let mut foreground = Vec::with_capacity(h * w);
        let mut valid = Vec::with_capacity(h * w);
        for (i, &v) in labels.iter().enumerate() {
            let class = classify_gt(v).ok_or_else(|| {
                Error::Data(format!("unknown ground-truth value {v} at ({}, {})", i / w, i % w))
            })?;
            let in_roi = roi.is_none_or(|r| r[i]);
            foreground.push(class == LabelClass::Foreground);
            valid.push(in_roi && class != LabelClass::Ignored);
        }
        Ok(Self { h, w, foreground, valid })
    }

    /// Extends to `h × w` with non-evaluable pixels on the right and bottom.
    pub fn padded(&self, h: usize, w: usize) -> Self {
        assert!(h >= self.h && w >= self.w);
        let mut out = Self {
            h,
            w,
            foreground: vec![false; h * w],
            valid: vec![false; h * w],
        };
        for i in 0..self.h {
            let (src, dst) = (i * self.w, i * w);
            out.foreground[dst..dst + self.w].copy_from_slice(&self.foreground[src..src + self.w]);
            out.valid[dst..dst + self.w].copy_from_slice(&self.valid[src..src + self.w]);
        }
        out
    }

    pub fn evaluable(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub fg: f64,
    pub bg: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights { fg: 1.0, bg: 1.0 };
}

/// Inverse-frequency weights normalised so a balanced frame gets `(1, 1)`.
/// A frame lacking one class gives that class weight 0 and the other 1.
pub fn class_weights(target: &Target) -> Result<ClassWeights> {
    let mut n_fg = 0usize;
    let mut n_bg = 0usize;
    for (&fg, &ok) in target.foreground.iter().zip(&target.valid) {
        if ok {
            if fg {
                n_fg += 1;
            } else {
                n_bg += 1;
            }
        }
    }
    let n = n_fg + n_bg;
    if n == 0 {
        return Err(Error::Data("frame has no evaluable pixels".into()));
    }
    Ok(match (n_fg, n_bg) {
        (0, _) => ClassWeights { fg: 0.0, bg: 1.0 },
        (_, 0) => ClassWeights { fg: 1.0, bg: 0.0 },
        _ => ClassWeights {
            fg: n as f64 / (2.0 * n_fg as f64),
            bg: n as f64 / (2.0 * n_bg as f64),
        },
    })
}

/// `L = −(1/N) Σ [w_fg·y·ln p + w_bg·(1−y)·ln(1−p)]` over evaluable pixels.
/// Returns the loss and `dL/dp`; ignored pixels and clamped probabilities
/// receive zero gradient.
pub fn weighted_bce<T: Scalar>(p: &Tensor<T>, target: &Target, weights: ClassWeights) -> Result<(f64, Tensor<T>)> {
    let s = p.shape();
    if s != Shape::new(1, 1, target.h, target.w) {
        return Err(Error::Shape(format!(
            "prediction {s} does not match a {}x{} target",
            target.h, target.w
        )));
    }
    let n = target.evaluable();
    if n == 0 {
        return Err(Error::Data("frame has no evaluable pixels".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(s);
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        if !target.valid[i] {
            continue;
        }
        let raw = p.data()[i].as_f64();
        let q = raw.clamp(P_MIN, 1.0 - P_MIN);
        let inside = raw == q;
        if target.foreground[i] {
            loss -= weights.fg * q.ln();
            if inside {
                *g = T::lit(-weights.fg * inv_n / q);
            }
        } else {
            loss -= weights.bg * (1.0 - q).ln();
            if inside {
                *g = T::lit(weights.bg * inv_n / (1.0 - q));
            }
        }
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(fg: &[bool]) -> Target {
        Target {
            h: 1,
            w: fg.len(),
            foreground: fg.to_vec(),
            valid: vec![true; fg.len()],
        }
    }

    #[test]
    fn weight_examples() {
        let mut fg = vec![false; 100];
        fg[..10].fill(true);
        let w = class_weights(&target(&fg)).unwrap();
        assert!((w.fg - 5.0).abs() < 1e-4);
        assert!((w.bg - 0.5556).abs() < 1e-4);

        let half: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        assert_eq!(class_weights(&target(&half)).unwrap(), ClassWeights::UNIT);

        let bg = class_weights(&target(&[false; 7])).unwrap();
        assert_eq!(bg, ClassWeights { fg: 0.0, bg: 1.0 });

        let mut none = target(&[true, false]);
        none.valid = vec![false, false];
        assert!(class_weights(&none).is_err());
    }

    #[test]
    fn perfect_prediction_has_tiny_loss() {
        let fg = [true, false, true, false];
        let p = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let w = ClassWeights { fg: 3.0, bg: 0.6 };
        let (loss, _) = weighted_bce(&p, &target(&fg), w).unwrap();
        assert!(loss <= 1e-6 * 3.0, "{loss}");
    }

    #[test]
    fn single_pixel_ln2() {
        let p = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 1), vec![0.5]).unwrap();
        let (loss, g) = weighted_bce(&p, &target(&[true]), ClassWeights { fg: 1.0, bg: 0.0 }).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g.data(), &[-2.0]);
    }

    #[test]
    fn unit_weights_equal_plain_bce() {
        let fg = [true, false, false, true, false];
        let probs = vec![0.3, 0.2, 0.9, 0.75, 0.5];
        let p = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 5), probs.clone()).unwrap();
        let (loss, _) = weighted_bce(&p, &target(&fg), ClassWeights::UNIT).unwrap();
        let plain: f64 = fg
            .iter()
            .zip(&probs)
            .map(|(&y, &q)| if y { -q.ln() } else { -(1.0 - q).ln() })
            .sum::<f64>()
            / 5.0;
        assert_eq!(loss, plain);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let fg = [true, false, true, false, false, true];
        let mut t = target(&fg);
        t.valid[4] = false;
        let w = ClassWeights { fg: 2.5, bg: 0.7 };
        let probs = vec![0.31, 0.62, 0.05, 0.44, 0.5, 0.93];
        let p = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 6), probs.clone()).unwrap();
        let (_, g) = weighted_bce(&p, &t, w).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut plus = probs.clone();
            let mut minus = probs.clone();
            plus[i] += h;
            minus[i] -= h;
            let lp = weighted_bce(&Tensor::from_vec(p.shape(), plus).unwrap(), &t, w).unwrap().0;
            let lm = weighted_bce(&Tensor::from_vec(p.shape(), minus).unwrap(), &t, w).unwrap().0;
            let num = (lp - lm) / (2.0 * h);
            let a = g.data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
            assert!(rel < 1e-6 || (a == 0.0 && num == 0.0), "pixel {i}: {a} vs {num}");
        }
        assert_eq!(g.data()[4], 0.0);
    }

    #[test]
    fn targets_from_gt() {
        let labels = [0u8, 50, 85, 170, 255, 255];
        let roi = [true, true, true, true, true, false];
        let t = Target::from_gt(2, 3, &labels, Some(&roi)).unwrap();
        assert_eq!(t.foreground, vec![false, false, false, false, true, true]);
        assert_eq!(t.valid, vec![true, true, false, false, true, false]);
        let err = Target::from_gt(1, 2, &[0, 7], None).unwrap_err();
        assert!(err.to_string().contains('7'));
        let padded = t.padded(4, 4);
        assert_eq!(padded.evaluable(), t.evaluable());
        assert!(padded.foreground[4 + 1]);
    }
}
