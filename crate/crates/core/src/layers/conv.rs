//! Stride-1 "same" convolution with dilation, lowered to im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct ConvCache<T: Scalar> {
    input_shape: Shape,
    kernel: usize,
    dilation: usize,
    /// One `(c·k·k) × (h·w)` column matrix per sample. For 1×1 kernels this
    /// is just the input plane block.
    cols: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, dilation: usize) -> Result<usize> {
    let ws = w.shape();
    if ws.h != ws.w {
        return Err(Error::Shape(format!("non-square kernel {ws}")));
    }
    if ws.h % 2 == 0 {
        return Err(Error::Shape(format!(
            "even kernel size {} has no symmetric same padding",
            ws.h
        )));
    }
    if dilation == 0 {
        return Err(Error::InvalidArgument("dilation must be >= 1".into()));
    }
    if ws.c != x.shape().c {
        return Err(Error::Shape(format!(
            "kernel {ws} expects {} input channels, got {}",
            ws.c,
            x.shape().c
        )));
    }
    if b.shape() != Shape::new(1, ws.n, 1, 1) {
        return Err(Error::Shape(format!(
            "bias {} does not match {} output channels",
            b.shape(),
            ws.n
        )));
    }
    Ok(ws.h)
}

/// Lay out the dilated taps of one sample as rows of a column matrix.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, dilation: usize, cols: &mut [T]) {
    let pad = (dilation * (k - 1) / 2) as isize;
    let hw = h * w;
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for u in 0..k {
            for v in 0..k {
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = (u * dilation) as isize - pad;
                let dx = (v * dilation) as isize - pad;
                // valid output columns j satisfy 0 <= j + dx < w
                let j0 = (-dx).clamp(0, w as isize) as usize;
                let j1 = (w as isize - dx).clamp(0, w as isize) as usize;
                for i in 0..h {
                    let si = i as isize + dy;
                    let out = &mut dst[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize || j0 >= j1 {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    out[..j0].fill(T::zero());
                    out[j1..].fill(T::zero());
                    let s0 = (j0 as isize + dx) as usize;
                    out[j0..j1].copy_from_slice(&src[s0..s0 + (j1 - j0)]);
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a column-matrix gradient back onto the image.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dilation: usize, x: &mut [T]) {
    let pad = (dilation * (k - 1) / 2) as isize;
    let hw = h * w;
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for u in 0..k {
            for v in 0..k {
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = (u * dilation) as isize - pad;
                let dx = (v * dilation) as isize - pad;
                let j0 = (-dx).clamp(0, w as isize) as usize;
                let j1 = (w as isize - dx).clamp(0, w as isize) as usize;
                for i in 0..h {
                    let si = i as isize + dy;
                    if si < 0 || si >= h as isize || j0 >= j1 {
                        continue;
                    }
                    let s0 = (j0 as isize + dx) as usize;
                    let dst = &mut plane[si as usize * w + s0..si as usize * w + s0 + (j1 - j0)];
                    for (d, &g) in dst.iter_mut().zip(&src[i * w + j0..i * w + j1]) {
                        *d = *d + g;
                    }
                }
                row += 1;
            }
        }
    }
}

/// `out(n,k,i,j) = b(k) + Σ w(k,c,u,v)·x_pad(n,c,i+d·u,j+d·v)` with zero
/// padding `d·(kh−1)/2`, so the output keeps the input's spatial size.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    dilation: usize,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let k = check_geometry(x, weight, bias, dilation)?;
    let s = x.shape();
    let out_c = weight.shape().n;
    let rows = s.c * k * k;
    let hw = s.plane();
    let out_shape = s.with_c(out_c);
    let mut out = Tensor::zeros(out_shape);
    let mut cols_all = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let xs = &x.data()[n * s.c * hw..(n + 1) * s.c * hw];
        let cols = if k == 1 {
            xs.to_vec()
        } else {
            let mut cols = vec![T::zero(); rows * hw];
            im2col(xs, s.c, s.h, s.w, k, dilation, &mut cols);
            cols
        };
        let dst = &mut out.data_mut()[n * out_c * hw..(n + 1) * out_c * hw];
        for (plane, &b) in dst.chunks_exact_mut(hw).zip(bias.data()) {
            plane.fill(b);
        }
        gemm(
            MatRef::new(weight.data(), out_c, rows),
            MatRef::new(&cols, rows, hw),
            T::one(),
            dst,
        );
        cols_all.push(cols);
    }
    Ok((
        out,
        ConvCache {
            input_shape: s,
            kernel: k,
            dilation,
            cols: cols_all,
        },
    ))
}

pub fn conv2d_backward<T: Scalar>(
    cache: ConvCache<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let s = cache.input_shape;
    let ws = weight.shape();
    let k = cache.kernel;
    if ws.c != s.c || ws.h != k {
        return Err(Error::Shape(format!(
            "kernel {ws} does not match cached input {s}"
        )));
    }
    let out_c = ws.n;
    if grad_out.shape() != s.with_c(out_c) {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match conv output {}",
            grad_out.shape(),
            s.with_c(out_c)
        )));
    }
    let rows = s.c * k * k;
    let hw = s.plane();
    let mut gw = Tensor::zeros(ws);
    let mut gb = Tensor::zeros(Shape::new(1, out_c, 1, 1));
    let mut gx = Tensor::zeros(s);
    let mut gcols = vec![T::zero(); rows * hw];
    for (n, cols) in cache.cols.iter().enumerate() {
        let gy = &grad_out.data()[n * out_c * hw..(n + 1) * out_c * hw];
        for (b, plane) in gb.data_mut().iter_mut().zip(gy.chunks_exact(hw)) {
            *b = *b + plane.iter().copied().sum::<T>();
        }
        gemm(
            MatRef::new(gy, out_c, hw),
            MatRef::t(cols, hw, rows),
            T::one(),
            gw.data_mut(),
        );
        let gxs = &mut gx.data_mut()[n * s.c * hw..(n + 1) * s.c * hw];
        if k == 1 {
            gemm(MatRef::t(weight.data(), rows, out_c), MatRef::new(gy, out_c, hw), T::zero(), gxs);
        } else {
            gemm(
                MatRef::t(weight.data(), rows, out_c),
                MatRef::new(gy, out_c, hw),
                T::zero(),
                &mut gcols,
            );
            col2im(&gcols, s.c, s.h, s.w, k, cache.dilation, gxs);
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}
