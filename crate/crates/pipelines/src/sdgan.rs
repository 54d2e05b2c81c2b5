//! Adversarial training of the mask-to-image generator under a frozen
//! segmentation guide.

use std::time::Instant;

use ribforge_core::nn::{discriminator_loss, generator_adv_loss, seg_loss, Optimizer};
use ribforge_core::{EvalTable, Tape, Tensor};
use ribforge_data::{MaskSet, Sample};
use ribforge_models::{Discriminator, GuidanceUNet, ModelWeights};

use crate::config::{PipelineConfig, SynthesisNorm};
use crate::dataset::{collate, epoch_order, DatasetSplits};
use crate::error::{PipelineError, Result};
use crate::eval::{evaluate_outputs, predict};
use crate::guidance::check_groups;
use crate::report::{weights_digest, LossLog, TrainReport};
use crate::synthesis::{generate_images, load_generator};

#[derive(Debug, Clone)]
pub struct SdganOutcome {
    pub generator: ModelWeights,
    pub discriminator: ModelWeights,
    /// `weight_digest` covers the generator file.
    pub report: TrainReport,
    pub guidance_digest_before: String,
    pub guidance_digest_after: String,
}

pub(crate) fn load_guidance(weights: &ModelWeights, cfg: &PipelineConfig) -> Result<GuidanceUNet<f32>> {
    let mut u = GuidanceUNet::<f32>::new(cfg.guidance.model.clone(), 0);
    weights.load_into(&mut u.store)?;
    u.store.set_frozen(true);
    Ok(u)
}

/// Trains generator and discriminator on the train split. Each batch takes
/// one discriminator step on real images and detached fakes, then one
/// generator step on the adversarial term plus BCE+Dice of the frozen guide
/// on the fakes.
pub fn train_sdgan(data: &DatasetSplits, guidance: &ModelWeights, cfg: &PipelineConfig) -> Result<SdganOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let tc = &cfg.sdgan.train;
    if data.train.is_empty() {
        return Err(PipelineError::Invalid("SD-GAN training needs a non-empty train split".into()));
    }
    check_groups(&data.train, cfg, "train")?;
    check_groups(&data.val, cfg, "val")?;

    let mut guide = load_guidance(guidance, cfg)?;
    let digest_before = guide.store.digest();
    let mut gen = ribforge_models::Generator::<f32>::new(cfg.sdgan.generator.clone(), tc.seed);
    let mut disc = Discriminator::<f32>::new(cfg.sdgan.discriminator.clone(), tc.seed);
    let mut opt_g = Optimizer::new(tc.optimizer, &gen.store);
    let mut opt_d = Optimizer::new(tc.optimizer, &disc.store);
    let (wa, ws) = (tc.loss_weights.adversarial as f32, tc.loss_weights.segmentation as f32);
    let mut log = LossLog::new("sdgan");
    let mut eval = None;

    for epoch in 0..tc.epochs {
        let lr = tc.schedule.lr_at(tc.optimizer.base_lr(), epoch)?;
        for idx in epoch_order(data.train.len(), tc.seed, epoch).chunks(tc.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
            let batch = collate(&refs)?;
            let real = batch.images.map(|v| v * 2.0 - 1.0);

            let tape_g = Tape::new();
            let fake = gen.forward_stacked(&tape_g, &batch.masks, true)?;

            let tape_d = Tape::new();
            let real_logits = disc.forward_tensor(&tape_d, &real, true)?;
            let fake_const = tape_d.constant((*fake.value()).clone());
            let fake_logits = disc.forward(&tape_d, fake_const, true)?;
            let d_loss = discriminator_loss(real_logits, fake_logits)?;
            log.add("d_loss", d_loss.item() as f64, epoch)?;
            tape_d.backward(d_loss)?;
            disc.store.collect_grads(&tape_d);
            opt_d.step(&mut disc.store, lr)?;

            disc.store.set_frozen(true);
            let step = (|| -> Result<()> {
                let logits = disc.forward(&tape_g, fake, true)?;
                let g_adv = generator_adv_loss(logits);
                let probs = guide.forward(&tape_g, fake.affine_scalar(0.5, 0.5), false)?;
                let seg = seg_loss(probs, &batch.masks)?;
                log.add("g_loss", g_adv.item() as f64, epoch)?;
                log.add("seg_loss", seg.item() as f64, epoch)?;
                tape_g.backward(g_adv.scale(wa).add(seg.scale(ws))?)?;
                Ok(())
            })();
            disc.store.set_frozen(false);
            step?;
            gen.store.collect_grads(&tape_g);
            opt_g.step(&mut gen.store, lr)?;
        }
        log.end_epoch();
        if tc.eval_due(epoch) && !data.val.is_empty() {
            let weights = ModelWeights::from_store(&gen.store);
            let masks: Vec<&MaskSet> = data.val.iter().map(|s| &s.masks).collect();
            let (table, loss) = consistency(&weights, &mut guide, &masks, cfg)?;
            log.push("val_seg_loss", loss, epoch)?;
            log::info!(
                "sdgan epoch {epoch}: d {:.4} g {:.4} seg {:.4} val mDSC {:.4}",
                log.last("d_loss").unwrap_or(f64::NAN),
                log.last("g_loss").unwrap_or(f64::NAN),
                log.last("seg_loss").unwrap_or(f64::NAN),
                table.mean_mdsc()
            );
            eval = Some(table);
        }
    }

    let generator = ModelWeights::from_store(&gen.store);
    let discriminator = ModelWeights::from_store(&disc.store);
    let report = TrainReport {
        stage: "sdgan".into(),
        config: serde_json::to_value(&cfg.sdgan).expect("config serialises"),
        losses: log.into_series(),
        eval,
        weight_digest: weights_digest(&generator)?,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok(SdganOutcome {
        generator,
        discriminator,
        report,
        guidance_digest_before: digest_before,
        guidance_digest_after: guide.store.digest(),
    })
}

fn consistency(gen_weights: &ModelWeights, guide: &mut GuidanceUNet<f32>, masks: &[&MaskSet], cfg: &PipelineConfig) -> Result<(EvalTable, f64)> {
    let mut gen = load_generator(gen_weights, cfg)?;
    let norm: SynthesisNorm = cfg.synthesis.norm;
    let images = generate_images(&mut gen, masks, norm, cfg.synthesis.batch_size)?;
    let refs: Vec<&Tensor<f32>> = images.iter().collect();
    let probs = predict(guide, &refs, cfg.synthesis.batch_size)?;
    let mut loss = 0.0;
    for (p, m) in probs.iter().zip(masks) {
        let tape = Tape::new();
        loss += seg_loss(tape.constant(p.clone()), &m.stacked())?.item() as f64;
    }
    let samples: Vec<Sample> = masks
        .iter()
        .zip(images)
        .map(|(m, image)| Sample { image, masks: (*m).clone(), provenance: ribforge_data::Provenance::Synthetic, seed: 0 })
        .collect();
    Ok((evaluate_outputs(&probs, &samples)?, loss / masks.len().max(1) as f64))
}

/// Scores of the frozen guide on images generated from `masks`, against
/// those same masks.
pub fn semantic_consistency(gen_weights: &ModelWeights, guidance: &ModelWeights, masks: &[&MaskSet], cfg: &PipelineConfig) -> Result<EvalTable> {
    if masks.is_empty() {
        return Err(PipelineError::Invalid("consistency needs at least one mask set".into()));
    }
    let mut guide = load_guidance(guidance, cfg)?;
    Ok(consistency(gen_weights, &mut guide, masks, cfg)?.0)
}
