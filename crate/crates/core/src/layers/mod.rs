//! Layer kernels with hand-written backward passes.
//!
//! Every forward function returns its output together with a cache holding
//! whatever the matching backward needs. Backward functions consume the
//! cache and return the input gradient plus any parameter gradients; the
//! caller decides where parameter gradients are accumulated.

mod activation;
mod conv;
mod dropout;
mod gap;
mod norm;
mod param;
mod pool;
mod upsample;

pub use activation::{relu_backward, relu_forward, sigmoid, sigmoid_backward, sigmoid_forward, ReluCache, SigmoidCache};
pub use conv::{conv2d_backward, conv2d_forward, ConvCache, ConvGrads};
pub use dropout::{dropout_backward, dropout_forward, spatial_dropout_forward, DropoutCache};
pub use gap::{gap_modulate_backward, gap_modulate_forward, global_avg_pool, global_avg_pool_backward, ModulateCache};
pub use norm::{instance_norm_backward, instance_norm_forward, NormCache, NormGrads};
pub use param::{Param, ParamKind};
pub use pool::{maxpool2x2_forward, maxpool3x3_same_forward, maxpool_backward, PoolCache};
pub use upsample::{bilinear_upsample2x, bilinear_upsample2x_backward};

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
