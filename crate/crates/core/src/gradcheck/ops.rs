//! [`Differentiable`] adapters for every layer and for the whole network.

use crate::error::Result;
use crate::gradcheck::Differentiable;
use crate::layers::{self, Mode};
use crate::network::{GapMode, ModelConfig, ModelWeights, Network};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};
use crate::training::{weighted_bce, ClassWeights, Target};

fn randn(shape: Shape, std: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::randn(shape, std, rng)
}

/// Values whose pairwise gaps are at least `1/numel`, in random order, so
/// that a tiny perturbation never changes a max-pool winner.
fn separated(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.numel();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    rng.shuffle(&mut v);
    Tensor::from_vec(shape, v).expect("matching length")
}

pub struct ConvOp {
    pub x: Tensor<f64>,
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
    pub dilation: usize,
}

impl ConvOp {
    pub fn random(input: Shape, out_c: usize, k: usize, dilation: usize, rng: &mut Rng) -> Self {
        Self {
            x: randn(input, 1.0, rng),
            weight: randn(Shape::new(out_c, input.c, k, k), 0.5, rng),
            bias: randn(Shape::new(1, out_c, 1, 1), 0.5, rng),
            dilation,
        }
    }
}

impl Differentiable for ConvOp {
    fn name(&self) -> String {
        let k = self.weight.shape().h;
        format!("conv{k}x{k} dilation {} on {}", self.dilation, self.x.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![
            ("input".into(), self.x.clone()),
            ("weight".into(), self.weight.clone()),
            ("bias".into(), self.bias.clone()),
        ]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::conv2d_forward(&t[0], &t[1], &t[2], self.dilation)?.0)
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = layers::conv2d_forward(&t[0], &t[1], &t[2], self.dilation)?;
        let gr = layers::conv2d_backward(cache, &t[1], g)?;
        Ok(vec![gr.input, gr.weight, gr.bias])
    }
}

pub struct ReluOp(pub Tensor<f64>);

impl ReluOp {
    /// Inputs kept at least 0.05 away from the kink.
    pub fn random(shape: Shape, rng: &mut Rng) -> Self {
        Self(Tensor::from_fn(shape, |_, _, _, _| {
            let v = 0.05 + rng.uniform();
            if rng.bernoulli(0.5) {
                v
            } else {
                -v
            }
        }))
    }
}

impl Differentiable for ReluOp {
    fn name(&self) -> String {
        format!("relu on {}", self.0.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![("input".into(), self.0.clone())]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::relu_forward(&t[0]).0)
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = layers::relu_forward(&t[0]);
        Ok(vec![layers::relu_backward(cache, g)?])
    }
}

pub struct SigmoidOp(pub Tensor<f64>);

impl Differentiable for SigmoidOp {
    fn name(&self) -> String {
        format!("sigmoid on {}", self.0.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![("input".into(), self.0.clone())]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::sigmoid_forward(&t[0]).0)
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = layers::sigmoid_forward(&t[0]);
        Ok(vec![layers::sigmoid_backward(cache, g)?])
    }
}

/// Max pooling, 2×2 stride 2 or 3×3 stride 1 "same".
pub struct MaxPoolOp {
    pub x: Tensor<f64>,
    pub window: usize,
}

impl MaxPoolOp {
    pub fn random(shape: Shape, window: usize, rng: &mut Rng) -> Self {
        Self {
            x: separated(shape, rng),
            window,
        }
    }

    fn run(&self, x: &Tensor<f64>) -> Result<(Tensor<f64>, layers::PoolCache)> {
        if self.window == 2 {
            layers::maxpool2x2_forward(x)
        } else {
            Ok(layers::maxpool3x3_same_forward(x))
        }
    }
}

impl Differentiable for MaxPoolOp {
    fn name(&self) -> String {
        format!("maxpool{0}x{0} on {1}", self.window, self.x.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![("input".into(), self.x.clone())]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(self.run(&t[0])?.0)
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = self.run(&t[0])?;
        Ok(vec![layers::maxpool_backward(cache, g)?])
    }
}

pub struct NormOp {
    pub x: Tensor<f64>,
    pub gamma: Tensor<f64>,
    pub beta: Tensor<f64>,
    pub eps: f64,
}

impl NormOp {
    pub fn random(shape: Shape, rng: &mut Rng) -> Self {
        let c = Shape::new(1, shape.c, 1, 1);
        Self {
            x: randn(shape, 1.0, rng),
            gamma: Tensor::from_fn(c, |_, _, _, _| 0.5 + rng.uniform()),
            beta: randn(c, 0.5, rng),
            eps: 1e-5,
        }
    }
}

impl Differentiable for NormOp {
    fn name(&self) -> String {
        format!("instance norm on {}", self.x.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![
            ("input".into(), self.x.clone()),
            ("gamma".into(), self.gamma.clone()),
            ("beta".into(), self.beta.clone()),
        ]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::instance_norm_forward(&t[0], &t[1], &t[2], self.eps)?.0)
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = layers::instance_norm_forward(&t[0], &t[1], &t[2], self.eps)?;
        let gr = layers::instance_norm_backward(cache, &t[1], g)?;
        Ok(vec![gr.input, gr.gamma, gr.beta])
    }
}

/// Train-mode dropout with a mask fixed by `seed`.
pub struct DropoutOp {
    pub x: Tensor<f64>,
    pub rate: f64,
    pub spatial: bool,
    pub seed: u64,
}

impl DropoutOp {
    fn run(&self, x: &Tensor<f64>) -> Result<(Tensor<f64>, layers::DropoutCache<f64>)> {
        let mut rng = Rng::new(self.seed);
        if self.spatial {
            layers::spatial_dropout_forward(x, self.rate, Mode::Train, &mut rng)
        } else {
            layers::dropout_forward(x, self.rate, Mode::Train, &mut rng)
        }
    }
}

impl Differentiable for DropoutOp {
    fn name(&self) -> String {
        let kind = if self.spatial { "spatial dropout" } else { "dropout" };
        format!("{kind} {} on {}", self.rate, self.x.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![("input".into(), self.x.clone())]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(self.run(&t[0])?.0)
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = self.run(&t[0])?;
        Ok(vec![layers::dropout_backward(cache, g)?])
    }
}

pub struct UpsampleOp(pub Tensor<f64>);

impl Differentiable for UpsampleOp {
    fn name(&self) -> String {
        format!("bilinear upsample x2 on {}", self.0.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![("input".into(), self.0.clone())]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::bilinear_upsample2x(&t[0]))
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![layers::bilinear_upsample2x_backward(t[0].shape(), g)?])
    }
}

pub struct GapOp(pub Tensor<f64>);

impl Differentiable for GapOp {
    fn name(&self) -> String {
        format!("global average pool on {}", self.0.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![("input".into(), self.0.clone())]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::global_avg_pool(&t[0]))
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![layers::global_avg_pool_backward(t[0].shape(), g)?])
    }
}

pub struct GapModulateOp {
    pub f: Tensor<f64>,
    pub alpha: Tensor<f64>,
}

impl Differentiable for GapModulateOp {
    fn name(&self) -> String {
        format!("gap modulation on {}", self.f.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![("features".into(), self.f.clone()), ("alpha".into(), self.alpha.clone())]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::gap_modulate_forward(&t[0], &t[1])?.0)
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = layers::gap_modulate_forward(&t[0], &t[1])?;
        let (gf, ga) = layers::gap_modulate_backward(cache, g)?;
        Ok(vec![gf, ga])
    }
}

/// Weighted BCE as a `(1, 1, 1, 1)` output.
pub struct BceOp {
    pub p: Tensor<f64>,
    pub target: Target,
    pub weights: ClassWeights,
}

impl BceOp {
    pub fn random(h: usize, w: usize, rng: &mut Rng) -> Self {
        let p = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, _, _| 0.05 + 0.9 * rng.uniform());
        let foreground = (0..h * w).map(|_| rng.bernoulli(0.3)).collect();
        let valid = (0..h * w).map(|_| rng.bernoulli(0.9)).collect();
        Self {
            p,
            target: Target { h, w, foreground, valid },
            weights: ClassWeights { fg: 1.7, bg: 0.7 },
        }
    }
}

impl Differentiable for BceOp {
    fn name(&self) -> String {
        format!("weighted bce on {}", self.p.shape())
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        vec![("probability".into(), self.p.clone())]
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let (loss, _) = weighted_bce(&t[0], &self.target, self.weights)?;
        Ok(Tensor::full(Shape::new(1, 1, 1, 1), loss))
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, grad) = weighted_bce(&t[0], &self.target, self.weights)?;
        let s = g.data()[0];
        Ok(vec![grad.map(|v| v * s)])
    }
}

/// The whole network in train mode (fixed dropout masks) followed by the
/// weighted BCE loss. Tensors are the input image and every parameter.
pub struct FullModelOp {
    pub net: Network,
    pub weights: ModelWeights<f64>,
    pub x: Tensor<f64>,
    pub target: Target,
    pub class_weights: ClassWeights,
    pub dropout_seed: u64,
}

impl FullModelOp {
    fn with_values(&self, t: &[Tensor<f64>]) -> ModelWeights<f64> {
        let mut w = self.weights.clone();
        for (p, v) in w.iter_mut().zip(&t[1..]) {
            p.value.clone_from(v);
        }
        w
    }
}

impl Differentiable for FullModelOp {
    fn name(&self) -> String {
        format!(
            "full model (width {}) + weighted bce on {}",
            self.net.config().width_mult,
            self.x.shape()
        )
    }

    fn tensors(&self) -> Vec<(String, Tensor<f64>)> {
        let mut out = vec![("input".to_string(), self.x.clone())];
        out.extend(self.weights.iter().map(|p| (p.name.clone(), p.value.clone())));
        out
    }

    fn forward(&self, t: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let w = self.with_values(t);
        let mut rng = Rng::new(self.dropout_seed);
        let trace = self.net.forward(&w, &t[0], Mode::Train, &mut rng)?;
        let (loss, _) = weighted_bce(&trace.probability, &self.target, self.class_weights)?;
        Ok(Tensor::full(Shape::new(1, 1, 1, 1), loss))
    }

    fn backward(&self, t: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut w = self.with_values(t);
        w.zero_grads();
        let mut rng = Rng::new(self.dropout_seed);
        let trace = self.net.forward(&w, &t[0], Mode::Train, &mut rng)?;
        let (_, grad) = weighted_bce(&trace.probability, &self.target, self.class_weights)?;
        let s = g.data()[0];
        let gx = self.net.backward(&mut w, trace, &grad.map(|v| v * s))?;
        let mut out = vec![gx];
        out.extend(w.iter().map(|p| p.grad.clone()));
        Ok(out)
    }
}

/// Full-model check case: `(1, 3, size, size)` input, a square target and
/// random weights, with biases and norm affines perturbed away from their
/// initial values so every parameter carries a non-trivial gradient.
pub fn full_model(width_mult: f64, size: usize, seed: u64) -> Result<FullModelOp> {
    let config = ModelConfig {
        width_mult,
        seed,
        ..Default::default()
    };
    let net = Network::new(config)?.with_gap_mode(GapMode::Learned);
    let mut rng = Rng::new(seed);
    let mut weights: ModelWeights<f64> = net.init_weights(&mut rng)?;
    for p in weights.iter_mut() {
        if p.kind == layers::ParamKind::Vector {
            let base = if p.name.ends_with(".gamma") { 1.0 } else { 0.0 };
            let v = Tensor::from_fn(p.shape(), |_, _, _, _| base + 0.1 * rng.normal());
            p.value = v;
        }
    }
    let x = Tensor::from_fn(Shape::new(1, 3, size, size), |_, _, _, _| rng.uniform());
    let q = size / 4;
    let foreground = (0..size * size)
        .map(|i| (q..3 * q).contains(&(i / size)) && (q..2 * q + 1).contains(&(i % size)))
        .collect();
    let mut valid = vec![true; size * size];
    valid[0] = false;
    let target = Target {
        h: size,
        w: size,
        foreground,
        valid,
    };
    let class_weights = crate::training::class_weights(&target)?;
    Ok(FullModelOp {
        net,
        weights,
        x,
        target,
        class_weights,
        dropout_seed: seed.wrapping_add(1),
    })
}

/// One instance of every layer operator, drawn with `seed`.
pub fn layer_suite(seed: u64) -> Vec<Box<dyn Differentiable>> {
    let mut rng = Rng::new(seed);
    let mut ops: Vec<Box<dyn Differentiable>> = Vec::new();
    for d in [1, 4, 8, 16] {
        ops.push(Box::new(ConvOp::random(Shape::new(1, 2, 8, 8), 3, 3, d, &mut rng)));
    }
    ops.push(Box::new(ConvOp::random(Shape::new(2, 3, 5, 6), 2, 3, 2, &mut rng)));
    ops.push(Box::new(ConvOp::random(Shape::new(1, 4, 6, 6), 3, 1, 1, &mut rng)));
    ops.push(Box::new(ReluOp::random(Shape::new(1, 2, 4, 4), &mut rng)));
    ops.push(Box::new(SigmoidOp(randn(Shape::new(1, 2, 4, 4), 2.0, &mut rng))));
    ops.push(Box::new(MaxPoolOp::random(Shape::new(1, 2, 6, 6), 2, &mut rng)));
    ops.push(Box::new(MaxPoolOp::random(Shape::new(1, 2, 5, 5), 3, &mut rng)));
    ops.push(Box::new(NormOp::random(Shape::new(1, 3, 4, 4), &mut rng)));
    ops.push(Box::new(NormOp::random(Shape::new(2, 2, 3, 5), &mut rng)));
    for spatial in [false, true] {
        ops.push(Box::new(DropoutOp {
            x: randn(Shape::new(1, 4, 4, 4), 1.0, &mut rng),
            rate: if spatial { 0.25 } else { 0.5 },
            spatial,
            seed: rng.below(u64::MAX),
        }));
    }
    ops.push(Box::new(UpsampleOp(randn(Shape::new(1, 2, 3, 4), 1.0, &mut rng))));
    ops.push(Box::new(GapOp(randn(Shape::new(1, 3, 4, 4), 1.0, &mut rng))));
    ops.push(Box::new(GapModulateOp {
        f: randn(Shape::new(1, 3, 4, 4), 1.0, &mut rng),
        alpha: randn(Shape::new(1, 3, 1, 1), 1.0, &mut rng),
    }));
    ops.push(Box::new(BceOp::random(4, 4, &mut rng)));
    ops
}
