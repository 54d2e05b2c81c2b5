//! The four training stages (guidance UNet, SD-GAN, pair synthesis, MTUNet)
//! and the ablation harnesses built on them.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod mtunet;
pub mod report;
pub mod sdgan;
pub mod synthesis;

pub use ablation::{ablation_modules, ablation_synthetic_volume, AblationRunner};
pub use config::{LossWeights, PipelineConfig, Preset, StageConfig, SynthesisConfig, SynthesisNorm};
pub use dataset::{generate_dataset, read_dataset, write_dataset, DatasetSplits, SplitIndex};
pub use error::{PipelineError, Result};
pub use eval::{evaluate_model, evaluate_outputs, evaluate_outputs_at, evaluate_segmenter, predict, EvalRow, Segmenter};
pub use guidance::train_guidance;
pub use mtunet::train_mtunet;
pub use report::{weights_digest, TrainReport};
pub use sdgan::{semantic_consistency, train_sdgan, SdganOutcome};
pub use synthesis::{generate_images, synthesize_pairs};
