use std::time::Instant;

use ribforge_core::nn::{bce_loss, Optimizer};
use ribforge_core::Tape;
use ribforge_data::Sample;
use ribforge_models::{GuidanceUNet, ModelWeights};

use crate::config::PipelineConfig;
use crate::dataset::{collate, epoch_order, DatasetSplits};
use crate::error::{PipelineError, Result};
use crate::eval::{batched_mean, evaluate_segmenter};
use crate::report::{weights_digest, LossLog, TrainReport};

pub(crate) fn check_groups(samples: &[Sample], cfg: &PipelineConfig, what: &str) -> Result<()> {
    let g = cfg.phantom.groups;
    match samples.iter().find(|s| s.masks.groups() != g || s.masks.extent() != (cfg.image_size, cfg.image_size)) {
        Some(s) => Err(PipelineError::Invalid(format!(
            "{what} sample (seed {}) has groups {:?} at {:?}, config expects {g:?} at {}x{}",
            s.seed,
            s.masks.groups(),
            s.masks.extent(),
            cfg.image_size,
            cfg.image_size
        ))),
        None => Ok(()),
    }
}

/// Trains the guidance UNet with BCE on all mask channels and returns the
/// weights with the lowest validation loss. Without a validation split the
/// training loss selects instead.
pub fn train_guidance(data: &DatasetSplits, cfg: &PipelineConfig) -> Result<(ModelWeights, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    let train_cfg = &cfg.guidance.train;
    if data.train.is_empty() {
        return Err(PipelineError::Invalid("guidance training needs a non-empty train split".into()));
    }
    check_groups(&data.train, cfg, "train")?;
    check_groups(&data.val, cfg, "val")?;

    let mut net = GuidanceUNet::<f32>::new(cfg.guidance.model.clone(), train_cfg.seed);
    let mut opt = Optimizer::new(train_cfg.optimizer, &net.store);
    let w = train_cfg.loss_weights.segmentation as f32;
    let mut log = LossLog::new("guidance");
    let mut best: Option<(f64, ModelWeights)> = None;

    for epoch in 0..train_cfg.epochs {
        let lr = train_cfg.schedule.lr_at(train_cfg.optimizer.base_lr(), epoch)?;
        for idx in epoch_order(data.train.len(), train_cfg.seed, epoch).chunks(train_cfg.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
            let batch = collate(&refs)?;
            let tape = Tape::new();
            let probs = net.forward_tensor(&tape, &batch.images, true)?;
            let loss = bce_loss(probs, &batch.masks)?;
            log.add("train_bce", loss.item() as f64, epoch)?;
            tape.backward(loss.scale(w))?;
            net.store.collect_grads(&tape);
            opt.step(&mut net.store, lr)?;
        }
        log.end_epoch();
        if train_cfg.eval_due(epoch) {
            let score = if data.val.is_empty() {
                log.last("train_bce").expect("one epoch logged")
            } else {
                let v = batched_mean(&data.val, train_cfg.batch_size, |b| {
                    let tape = Tape::new();
                    let probs = net.forward_tensor(&tape, &b.images, false)?;
                    Ok(bce_loss(probs, &b.masks)?.item() as f64)
                })?;
                log.push("val_bce", v, epoch)?;
                v
            };
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, ModelWeights::from_store(&net.store)));
            }
            log::info!("guidance epoch {epoch}: train_bce {:.4} selection {score:.4}", log.last("train_bce").unwrap_or(f64::NAN));
        }
    }

    let (_, weights) = best.expect("last epoch always evaluates");
    weights.load_into(&mut net.store)?;
    let eval_set = if data.val.is_empty() { &data.train } else { &data.val };
    let eval = evaluate_segmenter(&mut net, eval_set, train_cfg.batch_size)?;
    let report = TrainReport {
        stage: "guidance".into(),
        config: serde_json::to_value(&cfg.guidance).expect("config serialises"),
        losses: log.into_series(),
        eval: Some(eval),
        weight_digest: weights_digest(&weights)?,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok((weights, report))
}
