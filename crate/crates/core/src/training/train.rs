use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::{ModelWeights, Network};
use crate::rng::{streams, Rng};
use crate::tensor::{Scalar, Tensor};
use crate::training::{
    class_weights, schedule_and_stop, weighted_bce, Action, ClassWeights, EpochRecord, RmsProp, Target, TrainState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub rho: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub stop_patience: usize,
    pub val_fraction: f64,
    /// Seeds the split, the per-epoch shuffles and the dropout masks.
    pub seed: u64,
    /// Probability threshold used when binarising predictions.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            rho: 0.9,
            eps: 1e-8,
            batch_size: 1,
            max_epochs: 100,
            lr_patience: 5,
            lr_factor: 0.1,
            stop_patience: 10,
            val_fraction: 0.2,
            seed: 0,
            threshold: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be > 0", self.lr0));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho {} not in [0, 1)", self.rho));
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0".into());
        }
        if self.batch_size != 1 {
            return bad(format!("batch_size {} unsupported, only 1", self.batch_size));
        }
        if self.max_epochs == 0 || self.lr_patience == 0 || self.stop_patience == 0 {
            return bad("max_epochs and patience values must be >= 1".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor {} not in (0, 1)", self.lr_factor));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} not in (0, 1)", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} not in [0, 1]", self.threshold));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> RmsProp {
        RmsProp {
            rho: self.rho,
            eps: self.eps,
        }
    }
}

/// One network-ready frame: a `(1, C, H, W)` input and its target at the
/// same (padded) size.
#[derive(Debug, Clone)]
pub struct TrainFrame<T: Scalar = f32> {
    pub id: u32,
    pub input: Tensor<T>,
    pub target: Target,
}

impl<T: Scalar> TrainFrame<T> {
    pub fn new(id: u32, input: Tensor<T>, target: Target) -> Result<Self> {
        let s = input.shape();
        if s.n != 1 || s.h != target.h || s.w != target.w {
            return Err(Error::Shape(format!(
                "frame {id}: input {s} does not match a {}x{} target",
                target.h, target.w
            )));
        }
        Ok(Self { id, input, target })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar = f32> {
    /// Weights from the epoch with the lowest validation loss.
    pub weights: ModelWeights<T>,
    pub state: TrainState,
}

fn check_finite(loss: f64, what: &str, epoch: usize, id: u32) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} loss is {loss} at epoch {epoch}, frame {id}; aborting"
        )))
    }
}

/// Mean weighted BCE over `frames` in eval mode, summed in frame order.
pub fn evaluate_loss<T: Scalar>(net: &Network, weights: &ModelWeights<T>, frames: &[TrainFrame<T>]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Data("no frames to evaluate".into()));
    }
    let mut total = 0.0;
    for f in frames {
        let p = net.predict(weights, &f.input)?;
        let (loss, _) = weighted_bce(&p, &f.target, class_weights(&f.target)?)?;
        check_finite(loss, "validation", 0, f.id)?;
        total += loss;
    }
    Ok(total / frames.len() as f64)
}

/// One optimisation step on a single frame; returns its loss.
pub fn train_step<T: Scalar>(
    net: &Network,
    weights: &mut ModelWeights<T>,
    frame: &TrainFrame<T>,
    class_w: ClassWeights,
    opt: &RmsProp,
    lr: f64,
    dropout_rng: &mut Rng,
) -> Result<f64> {
    let trace = net.forward(weights, &frame.input, Mode::Train, dropout_rng)?;
    let (loss, grad) = weighted_bce(&trace.probability, &frame.target, class_w)?;
    net.backward(weights, trace, &grad)?;
    opt.step(weights, lr);
    Ok(loss)
}

/// Trains with batch size 1: every epoch shuffles `train`, steps RMSProp on
/// each frame, then measures validation loss in eval mode and consults the
/// plateau schedule. `on_epoch` sees each record as soon as it is final.
pub fn train_loop<T: Scalar>(
    net: &Network,
    mut weights: ModelWeights<T>,
    train: &[TrainFrame<T>],
    val: &[TrainFrame<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs frames in both splits (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    let class_w = train
        .iter()
        .map(|f| class_weights(&f.target))
        .collect::<Result<Vec<_>>>()?;
    let opt = cfg.optimizer();
    let mut shuffle_rng = Rng::with_stream(cfg.seed, streams::SHUFFLE);
    let mut dropout_rng = Rng::with_stream(cfg.seed, streams::DROPOUT);
    let mut state = TrainState::new(cfg);
    let mut best = weights.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    weights.zero_grads();

    loop {
        let lr = state.current_lr();
        let epoch = state.epoch + 1;
        shuffle_rng.shuffle(&mut order);
        let mut train_loss = 0.0;
        for &i in &order {
            let loss = train_step(net, &mut weights, &train[i], class_w[i], &opt, lr, &mut dropout_rng)?;
            check_finite(loss, "training", epoch, train[i].id)?;
            train_loss += loss;
        }
        train_loss /= train.len() as f64;
        let val_loss = evaluate_loss(net, &weights, val).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(format!("validation loss is not finite at epoch {epoch}; aborting")),
            other => other,
        })?;

        for p in weights.iter() {
            p.value
                .ensure_finite(&format!("parameter '{}' after epoch {epoch}", p.name))?;
        }
        let action = schedule_and_stop(&mut state, cfg, train_loss, val_loss);
        if state.best_epoch == state.epoch {
            best.clone_from(&weights);
        }
        on_epoch(state.history.last().expect("record just pushed"));
        if action == Action::Stop {
            break;
        }
    }
    best.zero_grads();
    Ok(TrainOutcome { weights: best, state })
}
