use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::{Param, ParamKind};
use crate::network::ModelConfig;
use crate::rng::Rng;
use crate::tensor::{Fill, Scalar, Shape, Tensor};

/// Output channels of the four retained VGG-16 blocks and their conv counts.
pub(crate) const ENCODER_BLOCKS: [(usize, usize); 4] = [(64, 2), (128, 2), (256, 3), (512, 3)];
/// Width of every feature-pooling branch and decoder stage.
pub(crate) const BRANCH_WIDTH: usize = 64;

pub(crate) fn encoder_conv(block: usize, idx: usize) -> String {
    format!("block{}_conv{}", block + 1, idx + 1)
}

pub(crate) const MFPM_POOL_CONV: &str = "mfpm_pool_conv";
/// Branch convolutions with their dilation rates.
pub(crate) const MFPM_BRANCHES: [(&str, usize); 4] = [
    ("mfpm_conv_a", 1),
    ("mfpm_conv_b", 4),
    ("mfpm_conv_c", 8),
    ("mfpm_conv_d", 16),
];
pub(crate) const MFPM_NORM: &str = "mfpm_norm";
pub(crate) const GAP_PROJ: &str = "gap_proj";
pub(crate) const DEC_CONVS: [&str; 3] = ["dec_conv1", "dec_conv2", "dec_conv3"];
pub(crate) const DEC_NORMS: [&str; 3] = ["dec_norm1", "dec_norm2", "dec_norm3"];
pub(crate) const DEC_OUT: &str = "dec_out";

/// One entry of the parameter layout implied by a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Shape,
    pub fill: Fill,
    /// Index of the encoder block owning the parameter, if any.
    pub block: Option<usize>,
}

fn conv_specs(out: &mut Vec<ParamSpec>, name: &str, cout: usize, cin: usize, k: usize, block: Option<usize>) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        kind: ParamKind::Kernel,
        shape: Shape::new(cout, cin, k, k),
        fill: Fill::HeNormal,
        block,
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        kind: ParamKind::Vector,
        shape: Shape::new(1, cout, 1, 1),
        fill: Fill::Zeros,
        block,
    });
}

fn norm_specs(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    for (suffix, fill) in [("gamma", Fill::Ones), ("beta", Fill::Zeros)] {
        out.push(ParamSpec {
            name: format!("{name}.{suffix}"),
            kind: ParamKind::Vector,
            shape: Shape::new(1, c, 1, 1),
            fill,
            block: None,
        });
    }
}

/// Every learnable tensor of the network, in forward order.
pub fn param_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut cin = config.input_channels;
    for (b, &(width, convs)) in ENCODER_BLOCKS.iter().enumerate() {
        let cout = config.scaled(width);
        for i in 0..convs {
            conv_specs(&mut specs, &encoder_conv(b, i), cout, cin, 3, Some(b));
            cin = cout;
        }
    }
    let enc = cin;
    let branch = config.scaled(BRANCH_WIDTH);
    conv_specs(&mut specs, MFPM_POOL_CONV, branch, enc, 1, None);
    for (i, (name, _)) in MFPM_BRANCHES.iter().enumerate() {
        let input = if i == 0 { enc } else { enc + branch };
        conv_specs(&mut specs, name, branch, input, 3, None);
    }
    norm_specs(&mut specs, MFPM_NORM, 5 * branch);

    let dec = config.scaled(BRANCH_WIDTH);
    conv_specs(&mut specs, GAP_PROJ, dec, config.scaled(ENCODER_BLOCKS[1].0), 1, None);
    let mut cin = 5 * branch;
    for (conv, norm) in DEC_CONVS.iter().zip(DEC_NORMS) {
        conv_specs(&mut specs, conv, dec, cin, 3, None);
        norm_specs(&mut specs, norm, dec);
        cin = dec;
    }
    conv_specs(&mut specs, DEC_OUT, 1, dec, 1, None);
    specs
}

/// Named parameter set of the network, in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T: Scalar = f32> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    /// He-normal kernels, zero biases, identity instance-norm affine.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = IndexMap::new();
        for spec in param_layout(config) {
            let value = Tensor::new(spec.shape, spec.fill, Some(rng))?;
            let mut p = Param::new(spec.name.clone(), spec.kind, value);
            p.trainable = spec.block.is_none_or(|b| !config.frozen_blocks[b]);
            params.insert(spec.name, p);
        }
        Ok(Self { params })
    }

    /// Assemble weights from named tensors (e.g. read from a file),
    /// checking them against the layout implied by `config`.
    pub fn from_named(config: &ModelConfig, mut tensors: IndexMap<String, (Vec<usize>, Vec<T>)>) -> Result<Self> {
        config.validate()?;
        let mut params = IndexMap::new();
        for spec in param_layout(config) {
            let (dims, data) = tensors
                .shift_remove(&spec.name)
                .ok_or_else(|| Error::Weights(format!("missing tensor '{}'", spec.name)))?;
            let expected = match spec.kind {
                ParamKind::Kernel => spec.shape.dims().to_vec(),
                ParamKind::Vector => vec![spec.shape.c],
            };
            if dims != expected {
                return Err(Error::Weights(format!(
                    "tensor '{}' has dims {dims:?}, config expects {expected:?}",
                    spec.name
                )));
            }
            let mut p = Param::new(spec.name.clone(), spec.kind, Tensor::from_vec(spec.shape, data)?);
            p.trainable = spec.block.is_none_or(|b| !config.frozen_blocks[b]);
            params.insert(spec.name, p);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Weights(format!("unexpected tensor '{extra}' for this config")));
        }
        Ok(Self { params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Weights(format!("no parameter named '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Weights(format!("no parameter named '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn accumulate(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        self.get_mut(name)?.accumulate(grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn zero_grads(&mut self) {
        self.iter_mut().for_each(Param::zero_grad);
    }

    /// Same values at another precision; gradients and accumulators reset.
    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        let params = self
            .params
            .iter()
            .map(|(k, p)| {
                let mut q = Param::new(p.name.clone(), p.kind, p.value.cast());
                q.trainable = p.trainable;
                (k.clone(), q)
            })
            .collect();
        ModelWeights { params }
    }
}
