//! Stage hyperparameters and the `desk`/`full` presets.
//!
//! A [`PipelineConfig`] is plain data. Presets are built in code; user
//! overrides are JSON documents merged over a preset with
//! [`PipelineConfig::with_overrides`], which rejects any key the preset does
//! not already contain.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ribforge_core::nn::{AdamConfig, LrSchedule, OptimizerConfig, SgdConfig};
use ribforge_data::{AffineRanges, PhantomConfig};
use ribforge_models::{DiscriminatorConfig, GeneratorConfig, GuidanceUNetConfig, MTUNetConfig};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(PipelineError::Config(format!("unknown preset {other:?} (expected \"desk\" or \"full\")"))),
        }
    }
}

/// Scales applied to the loss terms. Stages without an adversarial term
/// ignore `adversarial`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub adversarial: f64,
    pub segmentation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { adversarial: 1.0, segmentation: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Validation runs after every `eval_every` epochs and after the last one.
    pub eval_every: usize,
}

impl StageConfig {
    pub fn validate(&self, stage: &str) -> Result<()> {
        let fail = |msg: String| Err(PipelineError::Config(format!("{stage}: {msg}")));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1".into());
        }
        let lr = self.optimizer.base_lr();
        if !(lr.is_finite() && lr > 0.0) {
            return fail(format!("learning rate {lr} must be positive"));
        }
        if let Some(total) = self.schedule.total_epochs() {
            if total < self.epochs {
                return fail(format!("schedule covers {total} epochs but training runs {}", self.epochs));
            }
        }
        for w in [self.loss_weights.adversarial, self.loss_weights.segmentation] {
            if !(w.is_finite() && w >= 0.0) {
                return fail(format!("loss weight {w} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Validation due after `epoch` (0-based)?
    pub fn eval_due(&self, epoch: usize) -> bool {
        (epoch + 1) % self.eval_every == 0 || epoch + 1 == self.epochs
    }
}

/// How the generator normalises activations when synthesising pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisNorm {
    /// Running statistics collected during training.
    Running,
    /// Statistics of the synthesis batch itself.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub ranges: AffineRanges,
    pub batch_size: usize,
    pub norm: SynthesisNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Synthetic-to-real ratios of the data-volume ablation.
    pub multipliers: Vec<usize>,
    /// Synthetic-to-real ratio of the rows with SD-GAN enabled in the module
    /// ablation.
    pub module_multiplier: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceStage {
    pub model: GuidanceUNetConfig,
    pub train: StageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdganStage {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: StageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtunetStage {
    pub model: MTUNetConfig,
    pub train: StageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub image_size: usize,
    pub phantom: PhantomConfig,
    pub guidance: GuidanceStage,
    pub sdgan: SdganStage,
    pub synthesis: SynthesisConfig,
    pub mtunet: MtunetStage,
    pub ablation: AblationConfig,
}

impl PipelineConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    pub fn desk() -> Self {
        let preset = Preset::Desk;
        PipelineConfig {
            preset,
            image_size: 64,
            phantom: PhantomConfig::default(),
            guidance: GuidanceStage {
                model: GuidanceUNetConfig::desk(),
                train: StageConfig {
                    preset,
                    epochs: 30,
                    batch_size: 4,
                    optimizer: OptimizerConfig::Adam(AdamConfig::with_lr(1e-2)),
                    schedule: LrSchedule::LinearToZero { total_epochs: 30 },
                    seed: 0,
                    loss_weights: LossWeights::default(),
                    eval_every: 1,
                },
            },
            sdgan: SdganStage {
                generator: GeneratorConfig::desk(),
                discriminator: DiscriminatorConfig::desk(),
                train: StageConfig {
                    preset,
                    epochs: 30,
                    batch_size: 2,
                    optimizer: OptimizerConfig::Adam(AdamConfig { beta1: 0.5, ..AdamConfig::with_lr(2e-4) }),
                    schedule: LrSchedule::ConstantThenLinear { n_const: 15, n_decay: 15 },
                    seed: 0,
                    loss_weights: LossWeights::default(),
                    eval_every: 1,
                },
            },
            synthesis: SynthesisConfig { ranges: AffineRanges::default(), batch_size: 8, norm: SynthesisNorm::Running },
            mtunet: MtunetStage {
                model: MTUNetConfig::desk(),
                train: StageConfig {
                    preset,
                    epochs: 40,
                    batch_size: 8,
                    optimizer: OptimizerConfig::Sgd(SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 1e-4 }),
                    schedule: LrSchedule::Constant,
                    seed: 0,
                    loss_weights: LossWeights::default(),
                    eval_every: 1,
                },
            },
            ablation: AblationConfig { multipliers: vec![0, 1, 4], module_multiplier: 4 },
        }
    }

    pub fn full() -> Self {
        let preset = Preset::Full;
        PipelineConfig {
            preset,
            image_size: 448,
            phantom: PhantomConfig::full(),
            guidance: GuidanceStage {
                model: GuidanceUNetConfig::full(),
                train: StageConfig {
                    preset,
                    epochs: 200,
                    batch_size: 8,
                    optimizer: OptimizerConfig::Adam(AdamConfig::with_lr(1e-4)),
                    schedule: LrSchedule::LinearToZero { total_epochs: 200 },
                    seed: 0,
                    loss_weights: LossWeights::default(),
                    eval_every: 1,
                },
            },
            sdgan: SdganStage {
                generator: GeneratorConfig::full(),
                discriminator: DiscriminatorConfig::full(),
                train: StageConfig {
                    preset,
                    epochs: 200,
                    batch_size: 2,
                    optimizer: OptimizerConfig::Adam(AdamConfig { beta1: 0.5, ..AdamConfig::with_lr(2e-4) }),
                    schedule: LrSchedule::ConstantThenLinear { n_const: 100, n_decay: 100 },
                    seed: 0,
                    loss_weights: LossWeights::default(),
                    eval_every: 5,
                },
            },
            synthesis: SynthesisConfig { ranges: AffineRanges::default(), batch_size: 2, norm: SynthesisNorm::Running },
            mtunet: MtunetStage {
                model: MTUNetConfig::full(),
                train: StageConfig {
                    preset,
                    epochs: 200,
                    batch_size: 8,
                    optimizer: OptimizerConfig::Sgd(SgdConfig { lr: 0.01, momentum: 0.9, weight_decay: 1e-4 }),
                    schedule: LrSchedule::Constant,
                    seed: 0,
                    loss_weights: LossWeights::default(),
                    eval_every: 5,
                },
            },
            ablation: AblationConfig { multipliers: vec![0, 1, 2, 3, 4, 5, 6], module_multiplier: 1 },
        }
    }

    /// Sets every stage seed to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for s in [&mut self.guidance.train, &mut self.sdgan.train, &mut self.mtunet.train] {
            s.seed = seed;
        }
        self
    }

    /// Merges a JSON object over this config. Keys absent from the current
    /// config are rejected with their full path.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("config serialises");
        merge(&mut base, overrides, "")?;
        let cfg: PipelineConfig =
            serde_json::from_value(base).map_err(|e| PipelineError::Config(format!("invalid override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.image_size;
        if n == 0 || n % 16 != 0 {
            return Err(PipelineError::Config(format!("image_size {n} must be a positive multiple of 16")));
        }
        if self.phantom.image_size != n {
            return Err(PipelineError::Config(format!(
                "phantom.image_size {} disagrees with image_size {n}",
                self.phantom.image_size
            )));
        }
        self.phantom.validate()?;
        let g = self.phantom.groups;
        let models = [
            ("guidance.model.groups", self.guidance.model.groups),
            ("sdgan.generator.mask_channel_groups", self.sdgan.generator.mask_channel_groups),
            ("mtunet.model.head_groups", self.mtunet.model.head_groups),
        ];
        for (name, mg) in models {
            if mg != g {
                return Err(PipelineError::Config(format!("{name} {mg:?} disagrees with phantom groups {g:?}")));
            }
        }
        if self.sdgan.discriminator.output_extent(n).is_none() {
            return Err(PipelineError::Config(format!("discriminator has no output at extent {n}")));
        }
        self.guidance.train.validate("guidance")?;
        self.sdgan.train.validate("sdgan")?;
        self.mtunet.train.validate("mtunet")?;
        self.synthesis.ranges.validate()?;
        if self.synthesis.batch_size == 0 {
            return Err(PipelineError::Config("synthesis.batch_size must be at least 1".into()));
        }
        if self.ablation.multipliers.is_empty() {
            return Err(PipelineError::Config("ablation.multipliers must not be empty".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: &Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) if o.get("kind").is_none_or(|k| b.get("kind") == Some(k)) => {
            for (k, v) in o {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| PipelineError::Config(format!("unknown key {here:?}")))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        // Tagged enums (optimizer, schedule) change shape with their kind, so a
        // differently tagged object replaces the value wholesale.
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}
