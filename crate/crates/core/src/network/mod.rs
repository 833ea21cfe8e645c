//! The segmentation network: encoder, feature-pooling module and decoder.

mod config;
pub mod io;
mod model;
pub mod receptive;
mod weights;

pub use config::ModelConfig;
pub use io::{load_weights, save_weights};
pub use model::{DecoderCache, EncoderCache, EncoderOutput, ForwardTrace, GapMode, MfpmCache, Network};
pub use weights::{param_layout, ModelWeights, ParamSpec};
