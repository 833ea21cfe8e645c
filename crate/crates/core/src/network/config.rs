use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Scales every channel count; 1.0 is the full-size network.
    pub width_mult: f64,
    pub encoder_dropout_rate: f64,
    pub spatial_dropout_rate: f64,
    pub instance_norm_eps: f64,
    /// Seed for weight initialisation.
    pub seed: u64,
    /// Enables the GAP modulation of the first two decoder stages.
    pub gap: bool,
    /// Per encoder block: insert dropout after each of its convolutions.
    pub dropout_blocks: [bool; 4],
    /// Per encoder block: exclude its parameters from optimisation.
    pub frozen_blocks: [bool; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            width_mult: 1.0,
            encoder_dropout_rate: 0.5,
            spatial_dropout_rate: 0.25,
            instance_norm_eps: 1e-5,
            seed: 0,
            gap: true,
            dropout_blocks: [true; 4],
            frozen_blocks: [false; 4],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be >= 1".into()));
        }
        if !(self.width_mult > 0.0 && self.width_mult <= 1.0) {
            return Err(Error::Config(format!(
                "width_mult {} not in (0, 1]",
                self.width_mult
            )));
        }
        if (64.0 * self.width_mult).round() < 1.0 {
            return Err(Error::Config(format!(
                "width_mult {} leaves fewer than one decoder channel",
                self.width_mult
            )));
        }
        for (name, rate) in [
            ("encoder_dropout_rate", self.encoder_dropout_rate),
            ("spatial_dropout_rate", self.spatial_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} not in [0, 1)")));
            }
        }
        if !(self.instance_norm_eps > 0.0) {
            return Err(Error::Config("instance_norm_eps must be > 0".into()));
        }
        Ok(())
    }

    /// `round(base · width_mult)`, at least 1.
    pub fn scaled(&self, base: usize) -> usize {
        ((base as f64 * self.width_mult).round() as usize).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            ModelConfig { width_mult: 0.0, ..Default::default() },
            ModelConfig { width_mult: 1.5, ..Default::default() },
            ModelConfig { width_mult: 0.005, ..Default::default() },
            ModelConfig { encoder_dropout_rate: 1.0, ..Default::default() },
            ModelConfig { spatial_dropout_rate: -0.1, ..Default::default() },
            ModelConfig { instance_norm_eps: 0.0, ..Default::default() },
            ModelConfig { input_channels: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"width_mul": 0.5}"#);
        assert!(err.is_err());
        let ok: ModelConfig = serde_json::from_str(r#"{"width_mult": 0.125}"#).unwrap();
        assert_eq!(ok.scaled(64), 8);
        assert_eq!(ok.scaled(512), 64);
    }
}
