//! Differentiable operations, implemented as methods on [`Var`](crate::Var).

mod activation;
mod conv;
mod elementwise;
mod matmul;
mod norm;
mod pool;
mod shape;
mod upsample;

pub use activation::Activation;
pub use conv::{conv_out_extent, Conv2dOpts};
pub use elementwise::{broadcast_shape, BinaryOp};
pub use norm::{BatchMoments, BatchNormMode, RunningStats};
pub use pool::PoolKind;

pub(crate) use activation::sigmoid;
