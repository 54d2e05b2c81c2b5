//! Parameters, losses, optimizers and learning-rate schedules.

pub mod loss;
pub mod optim;
pub mod params;
pub mod schedule;

pub use loss::{bce_loss, bce_with_logits, dice_loss, discriminator_loss, gan_losses, generator_adv_loss, seg_loss, BCE_EPS};
pub use optim::{adam_update, sgd_momentum_update, AdamConfig, Optimizer, OptimizerConfig, SgdConfig};
pub use params::{Param, ParamId, ParamKind, ParamStore};
pub use schedule::LrSchedule;
