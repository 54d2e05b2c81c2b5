//! Dense tensors with reverse-mode automatic differentiation, generic over
//! `f32` and `f64`.

pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::grad_check;
pub use metrics::{ChannelGroups, EvalTable, Organ};
pub use rng::{derive_seed, seeded, SeededRng};
pub use scalar::Scalar;
pub use tape::{GradSink, NodeId, Tape, Var};
pub use tensor::{Init, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
