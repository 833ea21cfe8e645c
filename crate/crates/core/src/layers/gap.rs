//! Global average pooling and the channel modulation `f' = α·f + f`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let count = T::lit(s.plane() as f64);
    let data = x.planes().map(|p| p.iter().copied().sum::<T>() / count).collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("pooled shape")
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != Shape::new(input_shape.n, input_shape.c, 1, 1) {
        return Err(Error::Shape("gap: upstream gradient shape mismatch".into()));
    }
    let count = T::lit(input_shape.plane() as f64);
    let mut gx = Tensor::zeros(input_shape);
    for (plane, &g) in gx.planes_mut().zip(grad_out.data()) {
        plane.fill(g / count);
    }
    Ok(gx)
}

#[derive(Debug, Clone)]
pub struct ModulateCache<T: Scalar> {
    features: Tensor<T>,
    alpha: Tensor<T>,
}

/// Scales channel `i` of `f` by `1 + α_i`, computed as `α⊙f + f`.
pub fn gap_modulate_forward<T: Scalar>(f: &Tensor<T>, alpha: &Tensor<T>) -> Result<(Tensor<T>, ModulateCache<T>)> {
    let s = f.shape();
    if alpha.shape() != Shape::new(s.n, s.c, 1, 1) {
        return Err(Error::Shape(format!(
            "modulation vector {} does not match features {s}",
            alpha.shape()
        )));
    }
    let y = f.mul(alpha)?.add(f)?;
    Ok((
        y,
        ModulateCache {
            features: f.clone(),
            alpha: alpha.clone(),
        },
    ))
}

/// Returns `(d/df, d/dα)`.
pub fn gap_modulate_backward<T: Scalar>(cache: ModulateCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let f = cache.features;
    if grad_out.shape() != f.shape() {
        return Err(Error::Shape("modulation: upstream gradient shape mismatch".into()));
    }
    let gf = grad_out.mul(&cache.alpha)?.add(grad_out)?;
    let galpha: Vec<T> = grad_out
        .planes()
        .zip(f.planes())
        .map(|(g, x)| g.iter().zip(x).map(|(&a, &b)| a * b).sum())
        .collect();
    Ok((gf, Tensor::from_vec(cache.alpha.shape(), galpha)?))
}
