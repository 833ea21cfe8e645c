//! Finite-difference verification of the hand-written backward passes.
//!
//! An operator is wrapped as a [`Differentiable`] and reduced to the scalar
//! `L = Σ out ⊙ R` with a fixed random `R`. Its analytic gradients are
//! compared with central differences, coordinate by coordinate for small
//! tensors and along random directions plus sampled coordinates for large
//! ones.

mod ops;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use ops::{
    full_model, layer_suite, BceOp, ConvOp, DropoutOp, FullModelOp, GapModulateOp, GapOp, MaxPoolOp, NormOp, ReluOp,
    SigmoidOp, UpsampleOp,
};

/// Layer-level pass threshold.
pub const LAYER_TOL: f64 = 1e-4;
/// End-to-end pass threshold.
pub const MODEL_TOL: f64 = 1e-3;

/// Smallest denominator in a relative error.
const MIN_DENOM: f64 = 1e-8;
/// Quantisation steps of the difference quotient below which a derivative
/// is treated as indistinguishable from zero.
const QUANTA: f64 = 1e4;

/// An operator with explicit tensors (inputs first, then parameters).
pub trait Differentiable {
    fn name(&self) -> String;

    fn tensors(&self) -> Vec<(String, Tensor<f64>)>;

    /// Must be deterministic in `tensors`.
    fn forward(&self, tensors: &[Tensor<f64>]) -> Result<Tensor<f64>>;

    /// Gradient of `Σ out ⊙ grad_out` with respect to every tensor.
    fn backward(&self, tensors: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    pub perturbation: f64,
    pub seed: u64,
    /// Tensors up to this size are checked at every coordinate; larger ones
    /// at this many sampled coordinates.
    pub max_coords: usize,
    /// Random directions per large tensor.
    pub directions: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            perturbation: 1e-6,
            seed: 0,
            max_coords: 64,
            directions: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    /// Probes dropped because the loss is not differentiable there (a
    /// ReLU or max-pool switch within the perturbation).
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(analytic, numeric)` at the worst probe.
    pub worst: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Smallest denominator used in relative errors.
    pub floor: f64,
    pub tensors: Vec<TensorReport>,
}

impl CheckReport {
    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }

    /// Passes when the worst error is below `tol` and at most a tenth of the
    /// probes had to be skipped.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.skipped() * 10 <= self.checked() + self.skipped()
    }
}

fn weighted_sum(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

struct Probe<'a> {
    op: &'a dyn Differentiable,
    base: Vec<Tensor<f64>>,
    r: Tensor<f64>,
    l0: f64,
    h: f64,
    floor: f64,
}

enum Outcome {
    Rel { rel: f64, analytic: f64, numeric: f64 },
    Kink,
}

impl Probe<'_> {
    fn loss_at(&self, which: usize, dir: &[(usize, f64)], step: f64) -> Result<f64> {
        let mut ts = self.base.clone();
        let d = ts[which].data_mut();
        for &(i, v) in dir {
            d[i] += step * v;
        }
        Ok(weighted_sum(&self.op.forward(&ts)?, &self.r))
    }

    fn compare(&self, which: usize, dir: &[(usize, f64)], analytic: f64) -> Result<Outcome> {
        let h = self.h;
        let lp = self.loss_at(which, dir, h)?;
        let lm = self.loss_at(which, dir, -h)?;
        let (fwd, bwd) = ((lp - self.l0) / h, (self.l0 - lm) / h);
        // a switch inside [−h, h] shows up as disagreeing one-sided slopes
        if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) + self.floor {
            return Ok(Outcome::Kink);
        }
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor);
        Ok(Outcome::Rel { rel, analytic, numeric })
    }
}

/// One unit in the last place of `x`.
fn ulp(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(x.to_bits() + 1) - x
    }
}

/// Central-difference check of every tensor of `op`. The relative error is
/// `|a − n| / max(|a|, |n|, floor)` with `floor = max(1e-8, q·10⁴)`, where
/// `q = ulp(L)/h` is the quantisation step of the difference quotient.
/// Below the floor the comparison is effectively absolute.
pub fn gradient_check(op: &dyn Differentiable, cfg: &CheckConfig) -> Result<CheckReport> {
    let named = op.tensors();
    let base: Vec<Tensor<f64>> = named.iter().map(|(_, t)| t.clone()).collect();
    let out = op.forward(&base)?;
    let mut rng = Rng::new(cfg.seed ^ 0x5eed);
    let r = Tensor::from_fn(out.shape(), |_, _, _, _| rng.normal());
    let grads = op.backward(&base, &r)?;
    if grads.len() != base.len() {
        return Err(Error::Shape(format!(
            "{}: backward returned {} gradients for {} tensors",
            op.name(),
            grads.len(),
            base.len()
        )));
    }
    for (g, (name, t)) in grads.iter().zip(&named) {
        if g.shape() != t.shape() {
            return Err(Error::Shape(format!("{}: gradient of '{name}' has shape {}", op.name(), g.shape())));
        }
    }
    let l0 = weighted_sum(&out, &r);
    let floor = (QUANTA * ulp(l0) / cfg.perturbation).max(MIN_DENOM);
    let probe = Probe {
        op,
        l0,
        base,
        r,
        h: cfg.perturbation,
        floor,
    };

    let mut tensors = Vec::with_capacity(named.len());
    for (which, ((name, t), g)) in named.iter().zip(&grads).enumerate() {
        let mut rep = TensorReport {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: (0.0, 0.0),
        };
        let mut record = |outcome: Outcome| match outcome {
            Outcome::Kink => rep.skipped += 1,
            Outcome::Rel { rel, analytic, numeric } => {
                rep.checked += 1;
                if rel > rep.max_rel_error || rel.is_nan() {
                    rep.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                    rep.worst = (analytic, numeric);
                }
            }
        };
        let n = t.numel();
        let coords: Vec<usize> = if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut all);
            all.truncate(cfg.max_coords);
            all
        };
        for i in coords {
            record(probe.compare(which, &[(i, 1.0)], g.data()[i])?);
        }
        if n > cfg.max_coords {
            for _ in 0..cfg.directions {
                let dir: Vec<(usize, f64)> = (0..n).map(|i| (i, rng.normal())).collect();
                let norm = dir.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
                let dir: Vec<(usize, f64)> = dir.into_iter().map(|(i, v)| (i, v / norm)).collect();
                let analytic = dir.iter().map(|&(i, v)| g.data()[i] * v).sum();
                record(probe.compare(which, &dir, analytic)?);
            }
        }
        tensors.push(rep);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(CheckReport {
        name: op.name(),
        max_rel_error,
        floor,
        tensors,
    })
}

/// Wraps an operator and scales its analytic gradients, to show that the
/// checker rejects a wrong backward pass.
pub struct Corrupted<D> {
    pub inner: D,
    pub factor: f64,
}

impl<D: Differentiable> Differentiable for Corrupted<D> {
    fn name(&self) -> String {
        format!("{} (gradients x{})", self.inner.name(), self.factor)
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        self.inner.tensors()
    }

    fn forward(&self, tensors: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        self.inner.forward(tensors)
    }

    fn backward(&self, tensors: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let f = self.factor;
        Ok(self
            .inner
            .backward(tensors, grad_out)?
            .into_iter()
            .map(|g| g.map(|v| v * f))
            .collect())
    }
}
