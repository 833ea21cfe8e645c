//! Foreground segmentation with a truncated VGG encoder, a dilated
//! feature-pooling module and a GAP-modulated decoder, trained with
//! hand-written backward passes.

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorClass, Result};
pub use rng::Rng;
pub use tensor::{concat_channels, split_channels, Fill, Scalar, Shape, Tensor};
