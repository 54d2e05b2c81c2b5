use std::time::Instant;

use ribforge_core::nn::{seg_loss, Optimizer};
use ribforge_core::{Organ, Tape};
use ribforge_data::Sample;
use ribforge_models::{MTUNet, ModelWeights};

use crate::config::PipelineConfig;
use crate::dataset::{collate, epoch_order};
use crate::error::{PipelineError, Result};
use crate::eval::evaluate_segmenter;
use crate::guidance::check_groups;
use crate::report::{weights_digest, LossLog, TrainReport};

/// Trains MTUNet with BCE+Dice on the concatenation of `real` and
/// `synthetic`, shuffled uniformly. Returns the weights with the best
/// validation rib mIOU, or the final weights when `val` is empty.
pub fn train_mtunet(real: &[Sample], synthetic: &[Sample], val: &[Sample], cfg: &PipelineConfig) -> Result<(ModelWeights, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    let tc = &cfg.mtunet.train;
    let data: Vec<&Sample> = real.iter().chain(synthetic).collect();
    if data.is_empty() {
        return Err(PipelineError::Invalid("MTUNet training needs real or synthetic samples".into()));
    }
    check_groups(real, cfg, "real")?;
    check_groups(synthetic, cfg, "synthetic")?;
    check_groups(val, cfg, "val")?;

    let mut net = MTUNet::<f32>::new(cfg.mtunet.model.clone(), tc.seed);
    let mut opt = Optimizer::new(tc.optimizer, &net.store);
    let w = tc.loss_weights.segmentation as f32;
    let mut log = LossLog::new("mtunet");
    let mut best: Option<(f64, ModelWeights)> = None;
    let mut eval = None;

    for epoch in 0..tc.epochs {
        let lr = tc.schedule.lr_at(tc.optimizer.base_lr(), epoch)?;
        for idx in epoch_order(data.len(), tc.seed, epoch).chunks(tc.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| data[i]).collect();
            let batch = collate(&refs)?;
            let tape = Tape::new();
            let probs = net.forward_tensor(&tape, &batch.images, true)?;
            let loss = seg_loss(probs, &batch.masks)?;
            log.add("train_seg_loss", loss.item() as f64, epoch)?;
            tape.backward(loss.scale(w))?;
            net.store.collect_grads(&tape);
            opt.step(&mut net.store, lr)?;
        }
        log.end_epoch();
        if tc.eval_due(epoch) && !val.is_empty() {
            let table = evaluate_segmenter(&mut net, val, tc.batch_size)?;
            let score = table.group(Organ::Ribs).miou;
            log.push("val_rib_miou", score, epoch)?;
            log.push("val_mdsc", table.mean_mdsc(), epoch)?;
            log::info!("mtunet epoch {epoch}: loss {:.4} val rib mIOU {score:.4}", log.last("train_seg_loss").unwrap_or(f64::NAN));
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, ModelWeights::from_store(&net.store)));
                eval = Some(table);
            }
        }
    }

    let weights = match best {
        Some((_, w)) => w,
        None => ModelWeights::from_store(&net.store),
    };
    let report = TrainReport {
        stage: "mtunet".into(),
        config: serde_json::to_value(&cfg.mtunet).expect("config serialises"),
        losses: log.into_series(),
        eval,
        weight_digest: weights_digest(&weights)?,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok((weights, report))
}
