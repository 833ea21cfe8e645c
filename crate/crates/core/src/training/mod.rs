//! Loss, optimiser, plateau schedule and the epoch loop.

mod loss;
mod optim;
mod schedule;
mod split;
mod train;

pub use loss::{classify_gt, class_weights, gt, weighted_bce, ClassWeights, LabelClass, Target, P_MIN};
pub use optim::RmsProp;
pub use schedule::{schedule_and_stop, Action, EpochRecord, TrainState, IMPROVEMENT_TOL};
pub use split::{split_train_val, SplitSpec};
pub use train::{evaluate_loss, train_loop, train_step, TrainConfig, TrainFrame, TrainOutcome};
