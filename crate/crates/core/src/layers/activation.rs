use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ReluCache {
    active: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SigmoidCache<T: Scalar> {
    output: Tensor<T>,
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let active: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    // NaN passes through so that a diverged run is detected downstream
    let y = x.map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() });
    (y, ReluCache { active })
}

/// Passes the gradient where the input was strictly positive.
pub fn relu_backward<T: Scalar>(cache: ReluCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if cache.active.len() != grad_out.numel() {
        return Err(Error::Shape("relu: upstream gradient size mismatch".into()));
    }
    let mut g = grad_out.clone();
    for (v, &on) in g.data_mut().iter_mut().zip(&cache.active) {
        if !on {
            *v = T::zero();
        }
    }
    Ok(g)
}

/// Logistic function evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, SigmoidCache<T>) {
    let y = x.map(sigmoid);
    (y.clone(), SigmoidCache { output: y })
}

pub fn sigmoid_backward<T: Scalar>(cache: SigmoidCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let y = cache.output;
    if y.shape() != grad_out.shape() {
        return Err(Error::Shape("sigmoid: upstream gradient shape mismatch".into()));
    }
    let mut g = grad_out.clone();
    for (v, &s) in g.data_mut().iter_mut().zip(y.data()) {
        *v = *v * s * (T::one() - s);
    }
    Ok(g)
}
