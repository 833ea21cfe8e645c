//! Dense rank-4 tensors in `(n, c, h, w)` row-major layout.
//!
//! Precision is chosen by the element type: `Tensor<f32>` is the standard
//! training mode, `Tensor<f64>` is used for finite-difference verification.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a·b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    ///
    /// Every strided index must land inside the backing slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A dense row-major matrix operand for [`gemm`]. `transposed` means the
/// backing storage holds the transpose, i.e. a `cols × rows` row-major block.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: true,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out (m×n, row-major) = a·b + beta·out`.
pub(crate) fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension");
    assert!(a.data.len() >= m * k && b.data.len() >= k * n && out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out[..m * n].iter_mut().for_each(|v| *v = beta * *v);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the length assertions above cover every strided index.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Tensor dimensions `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Shape(format!("zero-sized dimension in {self}")));
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn planes(&self) -> usize {
        self.n * self.c
    }

    pub fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Self { h, w, ..self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Initial contents for [`Tensor::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Zeros,
    Ones,
    Constant(f64),
    /// `N(0, 2/fan_in)` with `fan_in = c·h·w`.
    HeNormal,
    /// `U(±sqrt(6/(fan_in+fan_out)))` with `fan_out = n·h·w`.
    GlorotUniform,
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor<{}>{} {:?}", T::NAME, self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "…")?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, fill: Fill, rng: Option<&mut Rng>) -> Result<Self> {
        shape.validate()?;
        let numel = shape.numel();
        let fan_in = (shape.c * shape.plane()) as f64;
        let fan_out = (shape.n * shape.plane()) as f64;
        let data = match fill {
            Fill::Zeros => vec![T::zero(); numel],
            Fill::Ones => vec![T::one(); numel],
            Fill::Constant(k) => vec![T::lit(k); numel],
            Fill::HeNormal | Fill::GlorotUniform => {
                let rng = rng.ok_or_else(|| {
                    Error::InvalidArgument(format!("{fill:?} initialisation needs an rng"))
                })?;
                if fill == Fill::HeNormal {
                    let std = (2.0 / fan_in).sqrt();
                    (0..numel).map(|_| T::lit(rng.normal() * std)).collect()
                } else {
                    let limit = (6.0 / (fan_in + fan_out)).sqrt();
                    (0..numel)
                        .map(|_| T::lit((2.0 * rng.uniform() - 1.0) * limit))
                        .collect()
                }
            }
        };
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        assert!(shape.validate().is_ok(), "zero-sized shape {shape}");
        Self {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(shape.validate().is_ok(), "zero-sized shape {shape}");
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Standard normal draws scaled by `std`.
    pub fn randn(shape: Shape, std: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::lit(rng.normal() * std))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Spatial slice for sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn planes(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.shape.plane())
    }

    pub fn planes_mut(&mut self) -> std::slice::ChunksExactMut<'_, T> {
        let p = self.shape.plane();
        self.data.chunks_exact_mut(p)
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// `Σ self ⊙ other`, accumulated in f64.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: element {i} is {}",
                self.data[i]
            ))),
        }
    }

    fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// In-place `self += other` for identically shaped tensors.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Pointwise `a op b`. `b` may also be a per-channel vector of shape
    /// `(n, c, 1, 1)`, in which case every spatial slice of channel `c` is
    /// combined with the matching scalar.
    pub fn elementwise(&self, b: &Self, op: BinaryOp) -> Result<Self> {
        let f = |x: T, y: T| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Mul => x * y,
        };
        if self.shape == b.shape {
            let data = self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
            return Ok(Self {
                shape: self.shape,
                data,
            });
        }
        let s = self.shape;
        if b.shape == Shape::new(s.n, s.c, 1, 1) {
            let mut out = self.clone();
            for (plane, &k) in out.planes_mut().zip(&b.data) {
                plane.iter_mut().for_each(|x| *x = f(*x, k));
            }
            return Ok(out);
        }
        Err(Error::Shape(format!(
            "cannot combine {} with {}",
            self.shape, b.shape
        )))
    }

    pub fn add(&self, b: &Self) -> Result<Self> {
        self.elementwise(b, BinaryOp::Add)
    }

    pub fn mul(&self, b: &Self) -> Result<Self> {
        self.elementwise(b, BinaryOp::Mul)
    }

    /// Channels `[start, start + len)` as a new tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if len == 0 || start + len > s.c {
            return Err(Error::Shape(format!(
                "channel range {start}..{} out of bounds for {s}",
                start + len
            )));
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let from = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[from..from + len * p]);
        }
        Ok(Self {
            shape: s.with_c(len),
            data,
        })
    }

    /// Per-(n,c) mean and biased variance over the spatial slice.
    pub fn channel_moments(&self) -> (Vec<T>, Vec<T>) {
        let count = T::lit(self.shape.plane() as f64);
        self.planes()
            .map(|plane| {
                let mean = plane.iter().copied().sum::<T>() / count;
                let var = plane
                    .iter()
                    .map(|&x| {
                        let d = x - mean;
                        d * d
                    })
                    .sum::<T>()
                    / count;
                (mean, var)
            })
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

/// Concatenate along the channel axis, preserving part order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?
        .shape();
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::Shape(format!(
                "concat: {s} does not match {first} outside the channel axis"
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.shape().c).sum();
    let shape = first.with_c(c);
    let plane = first.plane();
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for p in parts {
            let pc = p.shape().c;
            let from = n * pc * plane;
            data.extend_from_slice(&p.data()[from..from + pc * plane]);
        }
    }
    Ok(Tensor { shape, data })
}

/// Inverse of [`concat_channels`]: split into consecutive channel groups.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if sizes.iter().sum::<usize>() != x.shape().c {
        return Err(Error::Shape(format!(
            "split sizes {sizes:?} do not cover {}",
            x.shape()
        )));
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for &len in sizes {
        out.push(x.slice_channels(start, len)?);
        start += len;
    }
    Ok(out)
}
