//! Conversions between 8-bit pixmaps and network tensors.

use crate::dataset::Pixmap;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// `(1, C, H, W)` tensor with values `v / 255`.
pub fn normalize<T: Scalar>(img: &Pixmap) -> Tensor<T> {
    let c = img.channels;
    let shape = Shape::new(1, c, img.height, img.width);
    Tensor::from_fn(shape, |_, ch, i, j| {
        T::lit(img.data[(i * img.width + j) * c + ch] as f64 / 255.0)
    })
}

/// `round(p · 255)`, clamped to the byte range.
pub fn to_byte(p: f64) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Gray pixmap of a `(1, 1, H, W)` map in `[0, 1]`.
pub fn probability_pixmap<T: Scalar>(p: &Tensor<T>) -> Result<Pixmap> {
    let s = p.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::Shape(format!("expected a (1, 1, H, W) map, got {s}")));
    }
    Pixmap::gray(s.w, s.h, p.data().iter().map(|v| to_byte(v.as_f64())).collect())
}

/// Gray pixmap with 255 for foreground and 0 elsewhere.
pub fn mask_pixmap(mask: &[bool], width: usize, height: usize) -> Result<Pixmap> {
    Pixmap::gray(width, height, mask.iter().map(|&m| if m { 255 } else { 0 }).collect())
}

/// Smallest multiple of `m` that is ≥ `n`.
pub fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else if n > 1 && i - n < n - 1 {
        // mirror without repeating the edge: n, n+1 → n-2, n-3
        2 * (n - 1) - i
    } else {
        n - 1
    }
}

/// Pads right and bottom by reflection so `H` and `W` become multiples of
/// `m`; indices that fall beyond a full reflection repeat the edge.
/// Returns the padded tensor and the original `(H, W)`.
pub fn pad_to_multiple<T: Scalar>(x: &Tensor<T>, m: usize) -> Result<(Tensor<T>, (usize, usize))> {
    if m == 0 {
        return Err(Error::InvalidArgument("padding multiple must be >= 1".into()));
    }
    let s = x.shape();
    let (h, w) = (round_up(s.h, m), round_up(s.w, m));
    if (h, w) == (s.h, s.w) {
        return Ok((x.clone(), (s.h, s.w)));
    }
    let out = Tensor::from_fn(s.with_hw(h, w), |n, c, i, j| x.at(n, c, reflect(i, s.h), reflect(j, s.w)));
    Ok((out, (s.h, s.w)))
}

/// Top-left `h × w` window.
pub fn crop<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if h > s.h || w > s.w {
        return Err(Error::Shape(format!("cannot crop {s} to {h}x{w}")));
    }
    Ok(Tensor::from_fn(s.with_hw(h, w), |n, c, i, j| x.at(n, c, i, j)))
}
