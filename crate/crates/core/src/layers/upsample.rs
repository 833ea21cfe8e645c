//! 2× bilinear upsampling with half-pixel centres and edge clamping.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Source taps `(i0, i1, frac)` for each destination index along one axis.
fn taps(src: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * src)
        .map(|d| {
            let s = ((d as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn bilinear_upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let os = s.with_hw(2 * s.h, 2 * s.w);
    let (ty, tx) = (taps(s.h), taps(s.w));
    let mut out = Tensor::zeros(os);
    for (src, dst) in x.planes().zip(out.planes_mut()) {
        for (oi, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (oj, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let top = src[y0 * s.w + x0] * (T::one() - fx) + src[y0 * s.w + x1] * fx;
                let bot = src[y1 * s.w + x0] * (T::one() - fx) + src[y1 * s.w + x1] * fx;
                dst[oi * os.w + oj] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

/// Scatter the upstream gradient with the forward blend weights.
pub fn bilinear_upsample2x_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input_shape;
    let os = s.with_hw(2 * s.h, 2 * s.w);
    if grad_out.shape() != os {
        return Err(Error::Shape(format!(
            "upsample: upstream gradient {} does not match {os}",
            grad_out.shape()
        )));
    }
    let (ty, tx) = (taps(s.h), taps(s.w));
    let mut gx = Tensor::zeros(s);
    for (g, dst) in grad_out.planes().zip(gx.planes_mut()) {
        for (oi, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (oj, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let v = g[oi * os.w + oj];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                dst[y0 * s.w + x0] = dst[y0 * s.w + x0] + top * (T::one() - fx);
                dst[y0 * s.w + x1] = dst[y0 * s.w + x1] + top * fx;
                dst[y1 * s.w + x0] = dst[y1 * s.w + x0] + bot * (T::one() - fx);
                dst[y1 * s.w + x1] = dst[y1 * s.w + x1] + bot * fx;
            }
        }
    }
    Ok(gx)
}
