use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
}

/// Shuffles `ids` with `rng`, then takes the trailing `round(val_fraction·N)`
/// (at least one, at most N−1) as validation. Both lists are returned in
/// ascending order.
pub fn split_train_val(ids: &[u32], val_fraction: f64, rng: &mut Rng) -> Result<SplitSpec> {
    if ids.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 frames for a train/validation split, got {}",
            ids.len()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction {val_fraction} not in (0, 1)")));
    }
    let n = ids.len();
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut shuffled = ids.to_vec();
    rng.shuffle(&mut shuffled);
    let mut val = shuffled.split_off(n - n_val);
    let mut train = shuffled;
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitSpec { train, val })
}
