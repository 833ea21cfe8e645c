//! Plateau learning-rate reduction and early stopping, both driven by the
//! same "validation loss improved" signal but counted independently.

use serde::{Deserialize, Serialize};

use crate::training::TrainConfig;

/// Minimum decrease of the validation loss that counts as improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Continue,
    ReduceLr,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub lr0: f64,
    pub lr_factor: f64,
    /// Number of plateau reductions applied so far.
    pub reductions: u32,
    pub best_val_loss: f64,
    /// Epoch (1-based) that produced `best_val_loss`.
    pub best_epoch: usize,
    pub epochs_since_improve_lr: usize,
    pub epochs_since_improve_stop: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            lr0: cfg.lr0,
            lr_factor: cfg.lr_factor,
            reductions: 0,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improve_lr: 0,
            epochs_since_improve_stop: 0,
            history: Vec::new(),
        }
    }

    /// `lr0 · lr_factor^k`.
    pub fn current_lr(&self) -> f64 {
        self.lr0 * self.lr_factor.powi(self.reductions as i32)
    }
}

/// Called once at the end of every epoch. Records the epoch in the history
/// (with the learning rate it was trained at) and decides what happens next.
pub fn schedule_and_stop(state: &mut TrainState, cfg: &TrainConfig, train_loss: f64, val_loss: f64) -> Action {
    let lr = state.current_lr();
    state.epoch += 1;
    if val_loss < state.best_val_loss - IMPROVEMENT_TOL {
        state.best_val_loss = val_loss;
        state.best_epoch = state.epoch;
        state.epochs_since_improve_lr = 0;
        state.epochs_since_improve_stop = 0;
    } else {
        state.epochs_since_improve_lr += 1;
        state.epochs_since_improve_stop += 1;
    }

    let action = if state.epochs_since_improve_stop >= cfg.stop_patience || state.epoch >= cfg.max_epochs {
        Action::Stop
    } else if state.epochs_since_improve_lr >= cfg.lr_patience {
        state.reductions += 1;
        state.epochs_since_improve_lr = 0;
        Action::ReduceLr
    } else {
        Action::Continue
    };
    state.history.push(EpochRecord {
        epoch: state.epoch,
        train_loss,
        val_loss,
        lr,
        action,
    });
    action
}
