//! Adam and SGD with momentum over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::nn::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Sgd(SgdConfig),
}

impl OptimizerConfig {
    pub fn base_lr(&self) -> f64 {
        match self {
            OptimizerConfig::Adam(c) => c.lr,
            OptimizerConfig::Sgd(c) => c.lr,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_update<T: Scalar>(
    w: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if g.len() != w.len() || m.len() != w.len() || v.len() != w.len() {
        return Err(TensorError::mismatch("adam_update", &[w.len()], &[g.len(), m.len(), v.len()]));
    }
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t as i32));
    let eps = T::from_f64_lossy(cfg.eps);
    let lr = T::from_f64_lossy(lr);
    let one = T::one();
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        w[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// `g' = g + wd·w; v = momentum·v + g'; w -= lr·v`.
pub fn sgd_momentum_update<T: Scalar>(w: &mut [T], g: &[T], vel: &mut [T], cfg: &SgdConfig, lr: f64) -> Result<()> {
    if g.len() != w.len() || vel.len() != w.len() {
        return Err(TensorError::mismatch("sgd_momentum_update", &[w.len()], &[g.len(), vel.len()]));
    }
    let wd = T::from_f64_lossy(cfg.weight_decay);
    let mu = T::from_f64_lossy(cfg.momentum);
    let lr = T::from_f64_lossy(lr);
    for i in 0..w.len() {
        let gd = g[i] + wd * w[i];
        vel[i] = mu * vel[i] + gd;
        w[i] -= lr * vel[i];
    }
    Ok(())
}

/// Optimizer state bound to one store: per-parameter moment buffers and a
/// step counter.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|p| vec![T::zero(); p.value().numel()]).collect();
        let second = match config {
            OptimizerConfig::Adam(_) => zeros.clone(),
            OptimizerConfig::Sgd(_) => Vec::new(),
        };
        Optimizer {
            config,
            step: 0,
            first: zeros,
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every trainable parameter
    /// that holds a gradient, then clears the gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(TensorError::invalid("optimizer", "store layout changed since construction"));
        }
        self.step += 1;
        let t = self.step;
        for i in 0..store.len() {
            let id = ParamId(i);
            if !store.trainable(id) {
                continue;
            }
            let Some(g) = store.param(id).grad().cloned() else { continue };
            let w = store.value_mut(id);
            if g.shape() != w.shape() || self.first[i].len() != w.numel() {
                return Err(TensorError::mismatch("optimizer", w.shape(), g.shape()));
            }
            match &self.config {
                OptimizerConfig::Adam(c) => {
                    adam_update(w.data_mut(), g.data(), &mut self.first[i], &mut self.second[i], t, c, lr)?
                }
                OptimizerConfig::Sgd(c) => sgd_momentum_update(w.data_mut(), g.data(), &mut self.first[i], c, lr)?,
            }
        }
        store.zero_grads();
        Ok(())
    }
}
