//! Inverted dropout: surviving units are scaled by `1/(1−rate)` at train
//! time so evaluation is the identity.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct DropoutCache<T: Scalar> {
    /// Per-element scale (0 or 1/(1−rate)); `None` when the layer was a no-op.
    scale: Option<Vec<T>>,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
    }
    Ok(())
}

fn apply<T: Scalar>(x: &Tensor<T>, scale: Vec<T>) -> (Tensor<T>, DropoutCache<T>) {
    let mut y = x.clone();
    for (v, &s) in y.data_mut().iter_mut().zip(&scale) {
        *v = *v * s;
    }
    (y, DropoutCache { scale: Some(scale) })
}

fn identity<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, DropoutCache<T>) {
    (x.clone(), DropoutCache { scale: None })
}

/// Elementwise dropout.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, DropoutCache<T>)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(identity(x));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let scale = (0..x.numel())
        .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    Ok(apply(x, scale))
}

/// Drops whole `(n, c)` feature maps.
pub fn spatial_dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, DropoutCache<T>)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(identity(x));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let plane = x.shape().plane();
    let mut scale = Vec::with_capacity(x.numel());
    for _ in 0..x.shape().planes() {
        let s = if rng.bernoulli(rate) { T::zero() } else { keep };
        scale.extend(std::iter::repeat_n(s, plane));
    }
    Ok(apply(x, scale))
}

/// Shared by both dropout flavours: reuse the forward mask.
pub fn dropout_backward<T: Scalar>(cache: DropoutCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    match cache.scale {
        None => Ok(grad_out.clone()),
        Some(scale) => {
            if scale.len() != grad_out.numel() {
                return Err(Error::Shape("dropout: upstream gradient size mismatch".into()));
            }
            let mut g = grad_out.clone();
            for (v, &s) in g.data_mut().iter_mut().zip(&scale) {
                *v = *v * s;
            }
            Ok(g)
        }
    }
}
