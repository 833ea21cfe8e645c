//! Forward and backward passes of the full segmentation network.
//!
//! Graph (channel counts at `width_mult = 1`):
//!
//! ```text
//! x ─ block1 (conv64 ×2) ─ t2 ─ pool ─ block2 (conv128 ×2) ─ t4 ─ pool
//!   ─ block3 (conv256 ×3) ─ block4 (conv512 ×3) = F
//! F ─┬ maxpool3x3 ─ conv1x1 ─────────────── f_p
//!    ├ conv3x3 ─────────────────────────── f_a
//!    ├ [F, f_a] ─ conv3x3 dilation 4 ───── f_b
//!    ├ [F, f_b] ─ conv3x3 dilation 8 ───── f_c
//!    └ [F, f_c] ─ conv3x3 dilation 16 ──── f_d
//! F' = SpatialDropout(ReLU(IN([f_p, f_a, f_b, f_c, f_d])))
//! d1 = ReLU(IN(conv(F')))  · (1 + GAP(conv1x1(t4)))  ─ up2x
//! d2 = ReLU(IN(conv(·)))   · (1 + GAP(t2))           ─ up2x
//! d3 = ReLU(IN(conv(·)));  P = sigmoid(conv1x1(d3))
//! ```
//!
//! Every encoder convolution is followed by ReLU and, for blocks enabled in
//! [`ModelConfig::dropout_blocks`], dropout.

use crate::error::{Error, Result};
use crate::layers::{self, ConvCache, DropoutCache, Mode, ModulateCache, NormCache, PoolCache, ReluCache, SigmoidCache};
use crate::network::weights::{
    encoder_conv, BRANCH_WIDTH, DEC_CONVS, DEC_NORMS, DEC_OUT, ENCODER_BLOCKS, GAP_PROJ, MFPM_BRANCHES, MFPM_NORM,
    MFPM_POOL_CONV,
};
use crate::network::{ModelConfig, ModelWeights};
use crate::rng::Rng;
use crate::tensor::{concat_channels, split_channels, Scalar, Shape, Tensor};

/// How the decoder's GAP modulation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMode {
    /// `f' = α·f + f` with α pooled from the encoder taps.
    Learned,
    /// Modulation evaluated with α forced to zero.
    Zero,
    /// Modulation removed from the graph.
    Off,
}

/// The encoder's outputs.
#[derive(Debug, Clone)]
pub struct EncoderOutput<T: Scalar> {
    /// Block-4 features at 1/4 resolution.
    pub features: Tensor<T>,
    /// Block-1 second conv output, right before the first pooling.
    pub t2: Tensor<T>,
    /// Block-2 second conv output, right before the second pooling.
    pub t4: Tensor<T>,
}

struct UnitCache<T: Scalar> {
    conv: ConvCache<T>,
    relu: ReluCache,
    drop: Option<DropoutCache<T>>,
}

pub struct EncoderCache<T: Scalar> {
    units: Vec<Vec<UnitCache<T>>>,
    pools: Vec<PoolCache>,
}

pub struct MfpmCache<T: Scalar> {
    pool: PoolCache,
    pool_conv: ConvCache<T>,
    branches: Vec<ConvCache<T>>,
    norm: NormCache<T>,
    relu: ReluCache,
    drop: DropoutCache<T>,
}

struct DecoderUnit<T: Scalar> {
    conv: ConvCache<T>,
    norm: NormCache<T>,
    relu: ReluCache,
}

pub struct DecoderCache<T: Scalar> {
    units: Vec<DecoderUnit<T>>,
    modulate: Vec<Option<ModulateCache<T>>>,
    upsample_shapes: Vec<Shape>,
    proj: Option<(ConvCache<T>, Shape)>,
    t2_shape: Shape,
    out_conv: ConvCache<T>,
    sigmoid: SigmoidCache<T>,
}

/// Intermediate tensors of one forward pass plus everything backward needs.
pub struct ForwardTrace<T: Scalar> {
    pub mode: Mode,
    pub t2: Tensor<T>,
    pub t4: Tensor<T>,
    /// Encoder output F.
    pub features: Tensor<T>,
    /// Concatenated pooling branches before normalisation.
    pub fused: Tensor<T>,
    /// Pooling-module output F'.
    pub pooled: Tensor<T>,
    /// Decoder stage outputs after modulation (stages 1, 2) and stage 3.
    pub decoder: Vec<Tensor<T>>,
    /// Foreground probability map at input resolution.
    pub probability: Tensor<T>,
    encoder_cache: EncoderCache<T>,
    mfpm_cache: MfpmCache<T>,
    decoder_cache: DecoderCache<T>,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    gap_mode: GapMode,
}

fn conv_fwd<T: Scalar>(w: &ModelWeights<T>, name: &str, x: &Tensor<T>, dilation: usize) -> Result<(Tensor<T>, ConvCache<T>)> {
    layers::conv2d_forward(
        x,
        w.value(&format!("{name}.weight"))?,
        w.value(&format!("{name}.bias"))?,
        dilation,
    )
}

fn conv_bwd<T: Scalar>(w: &mut ModelWeights<T>, name: &str, cache: ConvCache<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let wname = format!("{name}.weight");
    let grads = layers::conv2d_backward(cache, w.value(&wname)?, g)?;
    w.accumulate(&wname, &grads.weight)?;
    w.accumulate(&format!("{name}.bias"), &grads.bias)?;
    Ok(grads.input)
}

fn norm_fwd<T: Scalar>(w: &ModelWeights<T>, name: &str, x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, NormCache<T>)> {
    layers::instance_norm_forward(
        x,
        w.value(&format!("{name}.gamma"))?,
        w.value(&format!("{name}.beta"))?,
        eps,
    )
}

fn norm_bwd<T: Scalar>(w: &mut ModelWeights<T>, name: &str, cache: NormCache<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let gname = format!("{name}.gamma");
    let grads = layers::instance_norm_backward(cache, w.value(&gname)?, g)?;
    w.accumulate(&gname, &grads.gamma)?;
    w.accumulate(&format!("{name}.beta"), &grads.beta)?;
    Ok(grads.input)
}

fn add_into<T: Scalar>(acc: &mut Tensor<T>, g: &Tensor<T>) -> Result<()> {
    acc.add_assign(g)
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let gap_mode = if config.gap { GapMode::Learned } else { GapMode::Off };
        Ok(Self { config, gap_mode })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn gap_mode(&self) -> GapMode {
        self.gap_mode
    }

    pub fn with_gap_mode(mut self, mode: GapMode) -> Self {
        self.gap_mode = mode;
        self
    }

    pub fn init_weights<T: Scalar>(&self, rng: &mut Rng) -> Result<ModelWeights<T>> {
        ModelWeights::init(&self.config, rng)
    }

    pub fn encoder_channels(&self) -> usize {
        self.config.scaled(ENCODER_BLOCKS[3].0)
    }

    pub fn branch_channels(&self) -> usize {
        self.config.scaled(BRANCH_WIDTH)
    }

    pub fn pooled_channels(&self) -> usize {
        5 * self.branch_channels()
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, network expects {}",
                s.c, self.config.input_channels
            )));
        }
        if s.h % 4 != 0 || s.w % 4 != 0 {
            return Err(Error::Shape(format!(
                "input spatial dims {}x{} must be divisible by 4",
                s.h, s.w
            )));
        }
        Ok(())
    }

    pub fn encoder_forward<T: Scalar>(
        &self,
        w: &ModelWeights<T>,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut units = Vec::with_capacity(4);
        let mut pools = Vec::with_capacity(2);
        let mut taps = Vec::with_capacity(2);
        for (b, &(_, convs)) in ENCODER_BLOCKS.iter().enumerate() {
            let mut block = Vec::with_capacity(convs);
            for i in 0..convs {
                let (y, conv) = conv_fwd(w, &encoder_conv(b, i), &h, 1)?;
                let (y, relu) = layers::relu_forward(&y);
                let (y, drop) = if self.config.dropout_blocks[b] {
                    let (y, c) = layers::dropout_forward(&y, self.config.encoder_dropout_rate, mode, rng)?;
                    (y, Some(c))
                } else {
                    (y, None)
                };
                block.push(UnitCache { conv, relu, drop });
                h = y;
            }
            units.push(block);
            // the third pooling of VGG-16 is removed, so only blocks 1 and 2 downsample
            if b < 2 {
                taps.push(h.clone());
                let (y, pc) = layers::maxpool2x2_forward(&h)?;
                pools.push(pc);
                h = y;
            }
        }
        let t4 = taps.pop().expect("two taps");
        let t2 = taps.pop().expect("two taps");
        Ok((EncoderOutput { features: h, t2, t4 }, EncoderCache { units, pools }))
    }

    /// Returns `(F', fused)` where `fused` is the branch concatenation
    /// before normalisation.
    pub fn mfpm_forward<T: Scalar>(
        &self,
        w: &ModelWeights<T>,
        features: &Tensor<T>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor<T>, Tensor<T>, MfpmCache<T>)> {
        if features.shape().c != self.encoder_channels() {
            return Err(Error::Shape(format!(
                "pooling module expects {} channels, got {}",
                self.encoder_channels(),
                features.shape().c
            )));
        }
        let (pooled, pool) = layers::maxpool3x3_same_forward(features);
        let (f_p, pool_conv) = conv_fwd(w, MFPM_POOL_CONV, &pooled, 1)?;
        let mut outs = vec![f_p];
        let mut branches = Vec::with_capacity(4);
        let mut prev: Option<Tensor<T>> = None;
        for (name, dilation) in MFPM_BRANCHES {
            let input = match &prev {
                None => features.clone(),
                Some(p) => concat_channels(&[features, p])?,
            };
            let (y, cache) = conv_fwd(w, name, &input, dilation)?;
            branches.push(cache);
            prev = Some(y.clone());
            outs.push(y);
        }
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        let fused = concat_channels(&refs)?;
        let (y, norm) = norm_fwd(w, MFPM_NORM, &fused, T::lit(self.config.instance_norm_eps))?;
        let (y, relu) = layers::relu_forward(&y);
        let (y, drop) = layers::spatial_dropout_forward(&y, self.config.spatial_dropout_rate, mode, rng)?;
        Ok((
            y,
            fused,
            MfpmCache {
                pool,
                pool_conv,
                branches,
                norm,
                relu,
                drop,
            },
        ))
    }

    fn decoder_unit<T: Scalar>(
        &self,
        w: &ModelWeights<T>,
        stage: usize,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, DecoderUnit<T>)> {
        let (y, conv) = conv_fwd(w, DEC_CONVS[stage], x, 1)?;
        let (y, norm) = norm_fwd(w, DEC_NORMS[stage], &y, T::lit(self.config.instance_norm_eps))?;
        let (y, relu) = layers::relu_forward(&y);
        Ok((y, DecoderUnit { conv, norm, relu }))
    }

    /// Returns the probability map and the stage outputs.
    pub fn decoder_forward<T: Scalar>(
        &self,
        w: &ModelWeights<T>,
        pooled: &Tensor<T>,
        t2: &Tensor<T>,
        t4: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>, DecoderCache<T>)> {
        let ps = pooled.shape();
        let dec = self.branch_channels();
        if ps.c != self.pooled_channels()
            || t4.shape() != Shape::new(ps.n, self.config.scaled(ENCODER_BLOCKS[1].0), 2 * ps.h, 2 * ps.w)
            || t2.shape() != Shape::new(ps.n, dec, 4 * ps.h, 4 * ps.w)
        {
            return Err(Error::Shape(format!(
                "decoder inputs F' {ps}, t4 {}, t2 {} are inconsistent",
                t4.shape(),
                t2.shape()
            )));
        }
        let (alphas, proj) = match self.gap_mode {
            GapMode::Learned => {
                let (p, cache) = conv_fwd(w, GAP_PROJ, t4, 1)?;
                let shape = p.shape();
                (
                    Some([layers::global_avg_pool(&p), layers::global_avg_pool(t2)]),
                    Some((cache, shape)),
                )
            }
            GapMode::Zero => {
                let z = Tensor::zeros(Shape::new(ps.n, dec, 1, 1));
                (Some([z.clone(), z]), None)
            }
            GapMode::Off => (None, None),
        };

        let mut units = Vec::with_capacity(3);
        let mut modulate = Vec::with_capacity(2);
        let mut upsample_shapes = Vec::with_capacity(2);
        let mut stages = Vec::with_capacity(3);
        let mut h = pooled.clone();
        for stage in 0..3 {
            let (y, unit) = self.decoder_unit(w, stage, &h)?;
            units.push(unit);
            if stage == 2 {
                h = y;
                break;
            }
            let y = match &alphas {
                Some(a) => {
                    let (m, cache) = layers::gap_modulate_forward(&y, &a[stage])?;
                    modulate.push(Some(cache));
                    m
                }
                None => {
                    modulate.push(None);
                    y
                }
            };
            upsample_shapes.push(y.shape());
            h = layers::bilinear_upsample2x(&y);
            stages.push(y);
        }
        stages.push(h.clone());
        let (logits, out_conv) = conv_fwd(w, DEC_OUT, &h, 1)?;
        let (p, sigmoid) = layers::sigmoid_forward(&logits);
        Ok((
            p,
            stages,
            DecoderCache {
                units,
                modulate,
                upsample_shapes,
                proj,
                t2_shape: t2.shape(),
                out_conv,
                sigmoid,
            },
        ))
    }

    pub fn forward<T: Scalar>(
        &self,
        w: &ModelWeights<T>,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardTrace<T>> {
        let (enc, encoder_cache) = self.encoder_forward(w, x, mode, rng)?;
        let (pooled, fused, mfpm_cache) = self.mfpm_forward(w, &enc.features, mode, rng)?;
        let (probability, decoder, decoder_cache) = self.decoder_forward(w, &pooled, &enc.t2, &enc.t4)?;
        Ok(ForwardTrace {
            mode,
            t2: enc.t2,
            t4: enc.t4,
            features: enc.features,
            fused,
            pooled,
            decoder,
            probability,
            encoder_cache,
            mfpm_cache,
            decoder_cache,
        })
    }

    /// Eval-mode probability map.
    pub fn predict<T: Scalar>(&self, w: &ModelWeights<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        // eval mode never draws from the rng
        let mut rng = Rng::new(0);
        Ok(self.forward(w, x, Mode::Eval, &mut rng)?.probability)
    }

    /// Back-propagates `dL/dP`, accumulating every parameter gradient into
    /// `w`. Returns `dL/dx`.
    pub fn backward<T: Scalar>(
        &self,
        w: &mut ModelWeights<T>,
        trace: ForwardTrace<T>,
        grad_p: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if trace.mode != Mode::Train {
            return Err(Error::InvalidArgument(
                "backward requires a forward pass recorded in train mode".into(),
            ));
        }
        if grad_p.shape() != trace.probability.shape() {
            return Err(Error::Shape(format!(
                "loss gradient {} does not match output {}",
                grad_p.shape(),
                trace.probability.shape()
            )));
        }
        let (g_pooled, g_t2, g_t4) = self.decoder_backward(w, trace.decoder_cache, grad_p)?;
        let g_features = self.mfpm_backward(w, trace.mfpm_cache, &g_pooled)?;
        self.encoder_backward(w, trace.encoder_cache, g_features, g_t2, g_t4)
    }

    fn decoder_backward<T: Scalar>(
        &self,
        w: &mut ModelWeights<T>,
        cache: DecoderCache<T>,
        grad_p: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>, Option<Tensor<T>>)> {
        let DecoderCache {
            mut units,
            mut modulate,
            mut upsample_shapes,
            proj,
            t2_shape,
            out_conv,
            sigmoid,
        } = cache;
        let g = layers::sigmoid_backward(sigmoid, grad_p)?;
        let mut g = conv_bwd(w, DEC_OUT, out_conv, &g)?;
        let mut g_alpha: [Option<Tensor<T>>; 2] = [None, None];
        for stage in (0..3).rev() {
            if stage < 2 {
                let shape = upsample_shapes.pop().expect("upsample shape");
                g = layers::bilinear_upsample2x_backward(shape, &g)?;
                if let Some(mc) = modulate.pop().expect("modulation slot") {
                    let (gf, ga) = layers::gap_modulate_backward(mc, &g)?;
                    g = gf;
                    g_alpha[stage] = Some(ga);
                }
            }
            let unit = units.pop().expect("decoder unit");
            g = layers::relu_backward(unit.relu, &g)?;
            g = norm_bwd(w, DEC_NORMS[stage], unit.norm, &g)?;
            g = conv_bwd(w, DEC_CONVS[stage], unit.conv, &g)?;
        }
        let (g_t2, g_t4) = match (proj, g_alpha) {
            (Some((proj_cache, proj_shape)), [Some(ga4), Some(ga2)]) => {
                let g_proj = layers::global_avg_pool_backward(proj_shape, &ga4)?;
                let g_t4 = conv_bwd(w, GAP_PROJ, proj_cache, &g_proj)?;
                let g_t2 = layers::global_avg_pool_backward(t2_shape, &ga2)?;
                (Some(g_t2), Some(g_t4))
            }
            _ => (None, None),
        };
        Ok((g, g_t2, g_t4))
    }

    fn mfpm_backward<T: Scalar>(&self, w: &mut ModelWeights<T>, cache: MfpmCache<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        let MfpmCache {
            pool,
            pool_conv,
            mut branches,
            norm,
            relu,
            drop,
        } = cache;
        let g = layers::dropout_backward(drop, g)?;
        let g = layers::relu_backward(relu, &g)?;
        let g = norm_bwd(w, MFPM_NORM, norm, &g)?;
        let b = self.branch_channels();
        let enc = self.encoder_channels();
        let mut parts = split_channels(&g, &[b; 5])?;
        // parts: [f_p, f_a, f_b, f_c, f_d]; walk the fusion chain backwards
        let mut g_features = Tensor::zeros(g.shape().with_c(enc));
        for i in (0..4).rev() {
            let (name, _) = MFPM_BRANCHES[i];
            let g_branch = parts.pop().expect("branch gradient");
            let g_in = conv_bwd(w, name, branches.pop().expect("branch cache"), &g_branch)?;
            if i == 0 {
                add_into(&mut g_features, &g_in)?;
            } else {
                let mut halves = split_channels(&g_in, &[enc, b])?;
                let g_prev = halves.pop().expect("previous branch part");
                add_into(&mut g_features, &halves[0])?;
                let last = parts.last_mut().expect("previous branch");
                add_into(last, &g_prev)?;
            }
        }
        let g_fp = parts.pop().expect("pool branch gradient");
        let g_pool = conv_bwd(w, MFPM_POOL_CONV, pool_conv, &g_fp)?;
        add_into(&mut g_features, &layers::maxpool_backward(pool, &g_pool)?)?;
        Ok(g_features)
    }

    fn encoder_backward<T: Scalar>(
        &self,
        w: &mut ModelWeights<T>,
        cache: EncoderCache<T>,
        g_features: Tensor<T>,
        g_t2: Option<Tensor<T>>,
        g_t4: Option<Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let EncoderCache { mut units, mut pools } = cache;
        let mut taps = [g_t2, g_t4];
        let mut g = g_features;
        for b in (0..4).rev() {
            if b < 2 {
                g = layers::maxpool_backward(pools.pop().expect("pool cache"), &g)?;
                if let Some(gt) = taps[b].take() {
                    add_into(&mut g, &gt)?;
                }
            }
            let mut block = units.pop().expect("block cache");
            for i in (0..block.len()).rev() {
                let unit = block.pop().expect("unit cache");
                if let Some(d) = unit.drop {
                    g = layers::dropout_backward(d, &g)?;
                }
                g = layers::relu_backward(unit.relu, &g)?;
                g = conv_bwd(w, &encoder_conv(b, i), unit.conv, &g)?;
            }
        }
        Ok(g)
    }
}
