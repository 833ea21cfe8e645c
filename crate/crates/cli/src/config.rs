use std::fs;
use std::path::{Path, PathBuf};

use fgseg::dataset::SynthSceneConfig;
use fgseg::network::ModelConfig;
use fgseg::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything a run depends on. Read from a JSON file, then overridden by
/// command-line flags; the merged result is what gets recorded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Scene generated when the scene is `synth`.
    pub synth: SynthSceneConfig,
    pub scene: Option<PathBuf>,
    /// Weight file: initial weights for `train`, the model for `predict`.
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        Ok(())
    }
}

/// Flags shared by commands that build a model.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ModelFlags {
    /// Channel-width multiplier [config default: 1.0]
    #[arg(long)]
    pub width_mult: Option<f64>,
    /// Dropout rate after encoder convolutions [config default: 0.5]
    #[arg(long)]
    pub encoder_dropout: Option<f64>,
    /// Disable the GAP modulation of the decoder
    #[arg(long)]
    pub no_gap: bool,
}

impl ModelFlags {
    pub fn apply(&self, m: &mut ModelConfig) {
        if let Some(v) = self.width_mult {
            m.width_mult = v;
        }
        if let Some(v) = self.encoder_dropout {
            m.encoder_dropout_rate = v;
        }
        if self.no_gap {
            m.gap = false;
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainFlags {
    /// Initial learning rate [config default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epoch cap [config default: 100]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without improvement before the learning rate drops [config default: 5]
    #[arg(long)]
    pub lr_patience: Option<usize>,
    /// Epochs without improvement before stopping [config default: 10]
    #[arg(long)]
    pub stop_patience: Option<usize>,
    /// Fraction of training frames held out for validation [config default: 0.2]
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Seed for initialisation, split, shuffling and dropout [config default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.lr {
            t.lr0 = v;
        }
        if let Some(v) = self.max_epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.lr_patience {
            t.lr_patience = v;
        }
        if let Some(v) = self.stop_patience {
            t.stop_patience = v;
        }
        if let Some(v) = self.val_fraction {
            t.val_fraction = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
            cfg.model.seed = v;
            cfg.synth.seed = v;
        }
    }
}
