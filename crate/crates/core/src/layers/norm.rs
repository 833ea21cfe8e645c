//! Instance normalisation: per-sample, per-channel spatial standardisation
//! followed by a learnable affine map. Statistics are always computed from
//! the current sample, so train and eval behave identically.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct NormCache<T: Scalar> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct NormGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn instance_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let s = x.shape();
    let cvec = Shape::new(1, s.c, 1, 1);
    if gamma.shape() != cvec || beta.shape() != cvec {
        return Err(Error::Shape(format!(
            "instance norm affine {} / {} does not match {} channels",
            gamma.shape(),
            beta.shape(),
            s.c
        )));
    }
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("instance norm eps must be > 0".into()));
    }
    let (mean, var) = x.channel_moments();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = x.clone();
    let mut y = x.clone();
    for (p, (np, yp)) in normalized.planes_mut().zip(y.planes_mut()).enumerate() {
        let c = p % s.c;
        let (m, is) = (mean[p], inv_std[p]);
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for (xh, yv) in np.iter_mut().zip(yp.iter_mut()) {
            *xh = (*xh - m) * is;
            *yv = g * *xh + b;
        }
    }
    Ok((y, NormCache { normalized, inv_std }))
}

pub fn instance_norm_backward<T: Scalar>(
    cache: NormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<NormGrads<T>> {
    let s = cache.normalized.shape();
    if grad_out.shape() != s {
        return Err(Error::Shape("instance norm: upstream gradient shape mismatch".into()));
    }
    let count = T::lit(s.plane() as f64);
    let mut gx = Tensor::zeros(s);
    let mut gg = Tensor::zeros(Shape::new(1, s.c, 1, 1));
    let mut gb = Tensor::zeros(Shape::new(1, s.c, 1, 1));
    let planes = cache.normalized.planes().zip(grad_out.planes()).zip(gx.planes_mut());
    for (p, ((xh, gy), gxp)) in planes.enumerate() {
        let c = p % s.c;
        let sum_g: T = gy.iter().copied().sum();
        let sum_gx: T = gy.iter().zip(xh).map(|(&g, &h)| g * h).sum();
        gb.data_mut()[c] = gb.data_mut()[c] + sum_g;
        gg.data_mut()[c] = gg.data_mut()[c] + sum_gx;
        // dx = γ/σ · (g − mean(g) − x̂·mean(g·x̂))
        let scale = gamma.data()[c] * cache.inv_std[p];
        let mg = sum_g / count;
        let mgx = sum_gx / count;
        for ((d, &g), &h) in gxp.iter_mut().zip(gy).zip(xh) {
            *d = scale * (g - mg - h * mgx);
        }
    }
    Ok(NormGrads {
        input: gx,
        gamma: gg,
        beta: gb,
    })
}
