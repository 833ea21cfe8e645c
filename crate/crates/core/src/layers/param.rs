use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// How a parameter is laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernel `(out, in, kh, kw)`, stored with rank 4.
    Kernel,
    /// Per-channel vector, held as `(1, c, 1, 1)` and stored with rank 1.
    Vector,
}

/// A learnable tensor with its gradient and RMSProp accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub rms_acc: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Self {
        let shape = value.shape();
        Self {
            name: name.into(),
            kind,
            grad: Tensor::zeros(shape),
            rms_acc: Tensor::zeros(shape),
            value,
            trainable: true,
        }
    }

    pub fn kernel(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self::new(name, ParamKind::Kernel, value)
    }

    pub fn vector(name: impl Into<String>, values: Vec<T>) -> Result<Self> {
        let shape = Shape::new(1, values.len(), 1, 1);
        Ok(Self::new(name, ParamKind::Vector, Tensor::from_vec(shape, values)?))
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    /// Dimensions as written to a weight file.
    pub fn file_dims(&self) -> Vec<usize> {
        match self.kind {
            ParamKind::Kernel => self.shape().dims().to_vec(),
            ParamKind::Vector => vec![self.shape().c],
        }
    }

    pub fn accumulate(&mut self, grad: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(grad).map_err(|e| match e {
            Error::Shape(msg) => Error::Shape(format!("gradient for {}: {msg}", self.name)),
            other => other,
        })
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}
