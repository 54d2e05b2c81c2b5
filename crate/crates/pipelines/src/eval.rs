//! Batched inference and dataset evaluation.

use serde::{Deserialize, Serialize};

use ribforge_core::metrics::evaluate_dataset;
use ribforge_core::{ChannelGroups, EvalTable, Tape, Tensor};
use ribforge_data::Sample;
use ribforge_models::{GuidanceUNet, MTUNet, MTUNetConfig, ModelWeights};

use crate::dataset::collate;
use crate::error::{PipelineError, Result};

pub const THRESHOLD: f64 = 0.5;

/// A network mapping images `[N,1,H,W]` to per-channel probabilities.
pub trait Segmenter {
    fn groups(&self) -> ChannelGroups;
    /// Eval-mode probabilities `[N,C,H,W]`.
    fn probs(&mut self, images: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Segmenter for GuidanceUNet<f32> {
    fn groups(&self) -> ChannelGroups {
        self.cfg.groups
    }

    fn probs(&mut self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        Ok((*self.forward_tensor(&tape, images, false)?.value()).clone())
    }
}

impl Segmenter for MTUNet<f32> {
    fn groups(&self) -> ChannelGroups {
        self.cfg.head_groups
    }

    fn probs(&mut self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        Ok((*self.forward_tensor(&tape, images, false)?.value()).clone())
    }
}

/// Splits `[N,…]` into `N` tensors of the trailing shape.
pub(crate) fn unbatch(t: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let inner = &t.shape()[1..];
    (0..t.shape()[0]).map(|i| t.narrow_batch(i, i + 1).reshaped(inner).expect("same numel")).collect()
}

/// Per-sample probability maps `[C,H,W]`.
pub fn predict(model: &mut dyn Segmenter, images: &[&Tensor<f32>], batch_size: usize) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let x = Tensor::stack(chunk)?;
        out.extend(unbatch(&model.probs(&x)?));
    }
    Ok(out)
}

/// Thresholded per-channel scores of `model` over `samples`.
pub fn evaluate_segmenter(model: &mut dyn Segmenter, samples: &[Sample], batch_size: usize) -> Result<EvalTable> {
    if samples.is_empty() {
        return Err(PipelineError::Invalid("evaluation needs at least one sample".into()));
    }
    let groups = model.groups();
    if let Some(s) = samples.iter().find(|s| s.masks.groups() != groups) {
        return Err(PipelineError::Invalid(format!(
            "sample masks have groups {:?}, model predicts {groups:?}",
            s.masks.groups()
        )));
    }
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let preds = predict(model, &images, batch_size)?;
    let truths: Vec<Tensor<f32>> = samples.iter().map(|s| s.masks.stacked()).collect();
    Ok(evaluate_dataset(&preds, &truths, &groups, THRESHOLD)?)
}

/// Builds an MTUNet from `weights` and scores it on `test`.
pub fn evaluate_model(weights: &ModelWeights, model: &MTUNetConfig, test: &[Sample]) -> Result<EvalTable> {
    let mut net = MTUNet::<f32>::new(model.clone(), 0);
    weights.load_into(&mut net.store)?;
    evaluate_segmenter(&mut net, test, 8)
}

/// Scores precomputed probability maps, e.g. ground truth fed back as a
/// prediction.
pub fn evaluate_outputs(outputs: &[Tensor<f32>], samples: &[Sample]) -> Result<EvalTable> {
    evaluate_outputs_at(outputs, samples, THRESHOLD)
}

pub fn evaluate_outputs_at(outputs: &[Tensor<f32>], samples: &[Sample], threshold: f64) -> Result<EvalTable> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(PipelineError::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let first = samples.first().ok_or_else(|| PipelineError::Invalid("no samples".into()))?;
    if outputs.len() != samples.len() {
        return Err(PipelineError::Invalid(format!("{} outputs for {} samples", outputs.len(), samples.len())));
    }
    let truths: Vec<Tensor<f32>> = samples.iter().map(|s| s.masks.stacked()).collect();
    Ok(evaluate_dataset(outputs, &truths, &first.masks.groups(), threshold)?)
}

/// Mean loss of `samples` under an eval-mode forward pass.
pub(crate) fn batched_mean<F>(samples: &[Sample], batch_size: usize, mut f: F) -> Result<f64>
where
    F: FnMut(&crate::dataset::Batch) -> Result<f64>,
{
    let (mut total, mut n) = (0.0, 0usize);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let b = collate(&refs)?;
        total += f(&b)? * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(total / n.max(1) as f64)
}

/// One row of an ablation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub n_real: usize,
    pub n_synthetic: usize,
    pub use_aspp: bool,
    pub eval: EvalTable,
}
