//! Affine mask synthesis followed by image generation.

use rand::seq::SliceRandom;

use ribforge_core::{derive_seed, seeded, Tape, Tensor};
use ribforge_data::io::quantize_image;
use ribforge_data::{affine_transform_maskset, sample_affine_params, MaskSet, Provenance, Sample};
use ribforge_models::{Generator, ModelWeights};

use crate::config::{PipelineConfig, SynthesisNorm};
use crate::error::{PipelineError, Result};
use crate::eval::unbatch;

pub(crate) fn load_generator(weights: &ModelWeights, cfg: &PipelineConfig) -> Result<Generator<f32>> {
    let mut g = Generator::<f32>::new(cfg.sdgan.generator.clone(), 0);
    weights.load_into(&mut g.store)?;
    Ok(g)
}

/// Generator images in `[0,1]`, one `[1,H,W]` tensor per mask set.
pub fn generate_images(gen: &mut Generator<f32>, masks: &[&MaskSet], norm: SynthesisNorm, batch_size: usize) -> Result<Vec<Tensor<f32>>> {
    let want = gen.cfg.mask_channel_groups;
    if let Some(m) = masks.iter().find(|m| m.groups() != want) {
        return Err(PipelineError::Invalid(format!("masks have groups {:?}, generator expects {want:?}", m.groups())));
    }
    let train = norm == SynthesisNorm::Batch;
    let mut out = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(batch_size.max(1)) {
        let stacks: Vec<Tensor<f32>> = chunk.iter().map(|m| m.stacked()).collect();
        let refs: Vec<&Tensor<f32>> = stacks.iter().collect();
        let x = Tensor::stack(&refs)?;
        let tape = Tape::new();
        let y = gen.forward_stacked(&tape, &x, train)?;
        let img = y.value().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0));
        out.extend(unbatch(&img));
    }
    Ok(out)
}

/// Source index of every output: a seeded permutation of the sources,
/// cycled.
pub fn source_schedule(n_sources: usize, n_out: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n_sources).collect();
    perm.shuffle(&mut seeded(derive_seed(seed, "synthesis.order")));
    (0..n_out).map(|i| perm[i % n_sources]).collect()
}

/// `n_out` synthetic pairs: warped copies of `sources` with generator images,
/// quantised exactly as the dataset format stores them.
pub fn synthesize_pairs(gen_weights: &ModelWeights, sources: &[MaskSet], n_out: usize, seed: u64, cfg: &PipelineConfig) -> Result<Vec<Sample>> {
    if n_out == 0 {
        return Err(PipelineError::Invalid("n_out must be at least 1".into()));
    }
    if sources.is_empty() {
        return Err(PipelineError::Invalid("synthesis needs at least one source mask set".into()));
    }
    let mut gen = load_generator(gen_weights, cfg)?;
    let mut rng = seeded(derive_seed(seed, "synthesis.affine"));
    let mut masks = Vec::with_capacity(n_out);
    for src in source_schedule(sources.len(), n_out, seed) {
        let p = sample_affine_params(&mut rng, &cfg.synthesis.ranges)?;
        masks.push(affine_transform_maskset(&sources[src], &p)?);
    }
    let refs: Vec<&MaskSet> = masks.iter().collect();
    let images = generate_images(&mut gen, &refs, cfg.synthesis.norm, cfg.synthesis.batch_size)?;
    Ok(masks
        .into_iter()
        .zip(images)
        .enumerate()
        .map(|(i, (masks, image))| Sample {
            image: quantize_image(&image),
            masks,
            provenance: Provenance::Synthetic,
            seed: derive_seed(seed, &format!("pair.{i}")),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_uses_every_source_once_per_cycle() {
        let s = source_schedule(750, 750, 4);
        let mut counts = vec![0; 750];
        for i in s {
            counts[i] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
        let s = source_schedule(5, 12, 4);
        assert_eq!(s[..5], s[5..10]);
    }
}
