use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};

/// Epoch-indexed learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// `base·(1 - epoch/total)`.
    LinearToZero { total_epochs: usize },
    /// `base` for the first `n_const` epochs, then linear decay to zero over `n_decay`.
    ConstantThenLinear { n_const: usize, n_decay: usize },
}

impl LrSchedule {
    pub fn total_epochs(&self) -> Option<usize> {
        match *self {
            LrSchedule::Constant => None,
            LrSchedule::LinearToZero { total_epochs } => Some(total_epochs),
            LrSchedule::ConstantThenLinear { n_const, n_decay } => Some(n_const + n_decay),
        }
    }

    pub fn lr_at(&self, base_lr: f64, epoch: usize) -> Result<f64> {
        if let Some(total) = self.total_epochs() {
            if epoch > total {
                return Err(TensorError::invalid("lr_at", format!("epoch {epoch} beyond schedule end {total}")));
            }
        }
        let lr = match *self {
            LrSchedule::Constant => base_lr,
            LrSchedule::LinearToZero { total_epochs } => {
                if total_epochs == 0 {
                    return Err(TensorError::invalid("lr_at", "zero-length schedule"));
                }
                base_lr * (1.0 - epoch as f64 / total_epochs as f64)
            }
            LrSchedule::ConstantThenLinear { n_const, n_decay } => {
                if epoch < n_const {
                    base_lr
                } else if n_decay == 0 {
                    0.0
                } else {
                    base_lr * (1.0 - (epoch - n_const) as f64 / n_decay as f64)
                }
            }
        };
        Ok(lr.max(0.0))
    }
}
