//! Max pooling. Backward routes each output gradient to the argmax of its
//! window; ties go to the first element in row-major order.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Shape,
    /// Flat input index of the winning element for every output element.
    argmax: Vec<usize>,
}

/// 2×2 window, stride 2.
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2x2 needs even spatial dims, got {s}")));
    }
    let os = s.with_hw(s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(os);
    let mut argmax = Vec::with_capacity(os.numel());
    let data = x.data();
    let mut o = 0;
    for p in 0..s.planes() {
        let base = p * s.plane();
        for i in 0..os.h {
            for j in 0..os.w {
                let mut best = base + 2 * i * s.w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * s.w + 2 * j + dj;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.data_mut()[o] = data[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    Ok((
        out,
        PoolCache {
            input_shape: s,
            argmax,
        },
    ))
}

/// 3×3 window, stride 1, padded so the output keeps the input size.
/// Out-of-image taps never win.
pub fn maxpool3x3_same_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, PoolCache) {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    let mut argmax = Vec::with_capacity(s.numel());
    let data = x.data();
    let mut o = 0;
    for p in 0..s.planes() {
        let base = p * s.plane();
        for i in 0..s.h {
            for j in 0..s.w {
                let mut best = usize::MAX;
                for y in i.saturating_sub(1)..(i + 2).min(s.h) {
                    for xx in j.saturating_sub(1)..(j + 2).min(s.w) {
                        let idx = base + y * s.w + xx;
                        if best == usize::MAX || data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.data_mut()[o] = data[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    (
        out,
        PoolCache {
            input_shape: s,
            argmax,
        },
    )
}

pub fn maxpool_backward<T: Scalar>(cache: PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.numel() != cache.argmax.len() {
        return Err(Error::Shape("maxpool: upstream gradient size mismatch".into()));
    }
    let mut gx = Tensor::zeros(cache.input_shape);
    let gd = gx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gd[idx] = gd[idx] + g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn pool_examples() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2x2_forward(&x).unwrap().0.data(), &[4.0]);

        let c = Tensor::<f64>::full(Shape::new(1, 1, 4, 4), 2.0);
        let (y, cache) = maxpool2x2_forward(&c).unwrap();
        assert_eq!(y, Tensor::full(Shape::new(1, 1, 2, 2), 2.0));
        let g = maxpool_backward(cache, &Tensor::full(y.shape(), 1.0)).unwrap();
        let expected: Vec<f64> = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && i % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(g.data(), expected.as_slice());

        assert!(maxpool2x2_forward(&Tensor::<f64>::zeros(Shape::new(1, 1, 3, 4))).is_err());
    }

    #[test]
    fn pool_matches_loop() {
        let mut rng = Rng::new(8);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 8, 8), 1.0, &mut rng);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..4 {
                    for j in 0..4 {
                        let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .iter()
                            .map(|&(a, b)| x.at(n, c, 2 * i + a, 2 * j + b))
                            .fold(f64::NEG_INFINITY, f64::max);
                        assert_eq!(y.at(n, c, i, j), m);
                    }
                }
            }
        }
        let (y3, _) = maxpool3x3_same_forward(&x);
        assert_eq!(y3.shape(), x.shape());
        for i in 0..8usize {
            for j in 0..8usize {
                let mut m = f64::NEG_INFINITY;
                for a in i.saturating_sub(1)..=(i + 1).min(7) {
                    for b in j.saturating_sub(1)..=(j + 1).min(7) {
                        m = m.max(x.at(1, 2, a, b));
                    }
                }
                assert_eq!(y3.at(1, 2, i, j), m);
            }
        }
    }

    #[test]
    fn same_pool_on_negative_input_ignores_padding() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), -5.0);
        let (y, _) = maxpool3x3_same_forward(&x);
        assert!(y.data().iter().all(|&v| v == -5.0));
    }
}
