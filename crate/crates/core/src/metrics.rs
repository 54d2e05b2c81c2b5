//! Overlap metrics for multi-label segmentation, aggregated per organ group.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel layout shared by masks, network outputs and reports: rib channels
/// first, then lungs, then clavicles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelGroups {
    pub ribs: usize,
    pub lungs: usize,
    pub clavicles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Organ {
    Ribs,
    Lungs,
    Clavicles,
}

impl Organ {
    pub const ALL: [Organ; 3] = [Organ::Ribs, Organ::Lungs, Organ::Clavicles];

    pub fn name(self) -> &'static str {
        match self {
            Organ::Ribs => "ribs",
            Organ::Lungs => "lungs",
            Organ::Clavicles => "clavicles",
        }
    }
}

impl ChannelGroups {
    pub const DESK: ChannelGroups = ChannelGroups { ribs: 12, lungs: 2, clavicles: 2 };
    pub const FULL: ChannelGroups = ChannelGroups { ribs: 24, lungs: 2, clavicles: 2 };

    pub fn total(&self) -> usize {
        self.ribs + self.lungs + self.clavicles
    }

    pub fn count(&self, organ: Organ) -> usize {
        match organ {
            Organ::Ribs => self.ribs,
            Organ::Lungs => self.lungs,
            Organ::Clavicles => self.clavicles,
        }
    }

    /// Channel range of `organ` in the concatenated layout.
    pub fn range(&self, organ: Organ) -> std::ops::Range<usize> {
        match organ {
            Organ::Ribs => 0..self.ribs,
            Organ::Lungs => self.ribs..self.ribs + self.lungs,
            Organ::Clavicles => self.ribs + self.lungs..self.total(),
        }
    }

    pub fn organ_of(&self, channel: usize) -> Option<Organ> {
        Organ::ALL.into_iter().find(|&o| self.range(o).contains(&channel))
    }
}

/// `1` where `p >= threshold`, else `0`.
pub fn binarize<T: Scalar>(probs: &Tensor<T>, threshold: f64) -> Tensor<T> {
    let th = T::from_f64_lossy(threshold);
    probs.map(|p| if p >= th { T::one() } else { T::zero() })
}

/// `(|P∩G|, |P|, |G|)` for hard masks given as 0/1 values.
pub fn overlap_counts<T: Scalar>(pred: &[T], gt: &[T]) -> Result<(usize, usize, usize)> {
    if pred.len() != gt.len() {
        return Err(TensorError::mismatch("overlap", &[pred.len()], &[gt.len()]));
    }
    let half = T::from_f64_lossy(0.5);
    let (mut i, mut p, mut g) = (0, 0, 0);
    for (&a, &b) in pred.iter().zip(gt) {
        let (a, b) = (a >= half, b >= half);
        i += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    Ok((i, p, g))
}

fn iou_from(i: usize, p: usize, g: usize) -> f64 {
    let union = p + g - i;
    if union == 0 {
        1.0
    } else {
        i as f64 / union as f64
    }
}

fn dice_from(i: usize, p: usize, g: usize) -> f64 {
    if p + g == 0 {
        1.0
    } else {
        2.0 * i as f64 / (p + g) as f64
    }
}

/// `|P∩G| / |P∪G|`; two empty masks score 1.
pub fn iou<T: Scalar>(pred: &[T], gt: &[T]) -> Result<f64> {
    let (i, p, g) = overlap_counts(pred, gt)?;
    Ok(iou_from(i, p, g))
}

/// `2|P∩G| / (|P|+|G|)`; two empty masks score 1.
pub fn dice<T: Scalar>(pred: &[T], gt: &[T]) -> Result<f64> {
    let (i, p, g) = overlap_counts(pred, gt)?;
    Ok(dice_from(i, p, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub miou: f64,
    pub mdsc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub ribs: GroupScore,
    pub lungs: GroupScore,
    pub clavicles: GroupScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub channel: usize,
    pub group: Organ,
    pub iou: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub groups: GroupScores,
    pub per_channel: Vec<ChannelScore>,
    pub n_samples: usize,
}

impl EvalTable {
    pub fn group(&self, organ: Organ) -> GroupScore {
        match organ {
            Organ::Ribs => self.groups.ribs,
            Organ::Lungs => self.groups.lungs,
            Organ::Clavicles => self.groups.clavicles,
        }
    }

    /// Unweighted mean of the three group mIOU values.
    pub fn mean_miou(&self) -> f64 {
        Organ::ALL.iter().map(|&o| self.group(o).miou).sum::<f64>() / 3.0
    }

    /// Unweighted mean of the three group mDSC values.
    pub fn mean_mdsc(&self) -> f64 {
        Organ::ALL.iter().map(|&o| self.group(o).mdsc).sum::<f64>() / 3.0
    }
}

/// Order-independent mean: values are sorted before summation so any
/// permutation of the input produces the same bits.
fn stable_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-channel IoU/Dice averaged over samples, then averaged over the
/// channels of each organ group. `outputs` hold probabilities `[C,H,W]`,
/// `truths` hold hard masks of the same shape.
pub fn evaluate_dataset<T: Scalar>(
    outputs: &[Tensor<T>],
    truths: &[Tensor<T>],
    groups: &ChannelGroups,
    threshold: f64,
) -> Result<EvalTable> {
    if outputs.len() != truths.len() {
        return Err(TensorError::invalid(
            "evaluate_dataset",
            format!("{} outputs vs {} ground truths", outputs.len(), truths.len()),
        ));
    }
    let c = groups.total();
    let mut ious = vec![Vec::with_capacity(outputs.len()); c];
    let mut dices = vec![Vec::with_capacity(outputs.len()); c];
    for (out, gt) in outputs.iter().zip(truths) {
        if out.shape() != gt.shape() {
            return Err(TensorError::mismatch("evaluate_dataset", out.shape(), gt.shape()));
        }
        if out.rank() != 3 || out.shape()[0] != c {
            return Err(TensorError::invalid(
                "evaluate_dataset",
                format!("output shape {:?} does not match {c} grouped channels", out.shape()),
            ));
        }
        let plane = out.shape()[1] * out.shape()[2];
        let hard = binarize(out, threshold);
        for ch in 0..c {
            let (i, p, g) = overlap_counts(&hard.data()[ch * plane..(ch + 1) * plane], &gt.data()[ch * plane..(ch + 1) * plane])?;
            ious[ch].push(iou_from(i, p, g));
            dices[ch].push(dice_from(i, p, g));
        }
    }
    let per_channel: Vec<ChannelScore> = (0..c)
        .map(|ch| ChannelScore {
            channel: ch,
            group: groups.organ_of(ch).expect("channel within layout"),
            iou: stable_mean(&mut ious[ch]),
            dice: stable_mean(&mut dices[ch]),
        })
        .collect();
    let group = |o: Organ| {
        let r = groups.range(o);
        let mut i: Vec<f64> = per_channel[r.clone()].iter().map(|s| s.iou).collect();
        let mut d: Vec<f64> = per_channel[r].iter().map(|s| s.dice).collect();
        GroupScore {
            miou: stable_mean(&mut i),
            mdsc: stable_mean(&mut d),
        }
    };
    Ok(EvalTable {
        groups: GroupScores {
            ribs: group(Organ::Ribs),
            lungs: group(Organ::Lungs),
            clavicles: group(Organ::Clavicles),
        },
        per_channel,
        n_samples: outputs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[u8]) -> Vec<f64> {
        v.iter().map(|&b| b as f64).collect()
    }

    #[test]
    fn binarize_rules() {
        let t = Tensor::<f64>::from_f64(&[3], &[0.5, 0.4, 0.9]).unwrap();
        let b = binarize(&t, 0.5);
        assert_eq!(b.data(), &[1.0, 0.0, 1.0]);
        assert_eq!(binarize(&b, 0.5), b);
        assert!(binarize(&Tensor::<f64>::full(&[5], 0.4), 0.5).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_counted_overlap() {
        let g = m(&[1, 1, 1, 1, 0, 0]);
        let p = m(&[1, 1, 0, 0, 0, 0]);
        assert_eq!(iou(&p, &g).unwrap(), 0.5);
        assert!((dice(&p, &g).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(iou(&g, &g).unwrap(), 1.0);
        assert_eq!(dice(&m(&[1, 0]), &m(&[0, 1])).unwrap(), 0.0);
        assert_eq!(iou(&m(&[0, 0]), &m(&[0, 0])).unwrap(), 1.0);
        assert!(iou(&m(&[0]), &m(&[0, 0])).is_err());
    }

    fn groups() -> ChannelGroups {
        ChannelGroups { ribs: 3, lungs: 1, clavicles: 1 }
    }

    #[test]
    fn perfect_prediction_is_all_ones() {
        let gt = Tensor::<f64>::from_f64(&[5, 1, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let t = evaluate_dataset(&[gt.clone()], &[gt], &groups(), 0.5).unwrap();
        for o in Organ::ALL {
            assert_eq!(t.group(o), GroupScore { miou: 1.0, mdsc: 1.0 });
        }
    }

    #[test]
    fn channel_mean_over_samples() {
        let gs = ChannelGroups { ribs: 1, lungs: 0, clavicles: 0 };
        let gt = Tensor::<f64>::from_f64(&[1, 1, 2], &[1.0, 1.0]).unwrap();
        let half = Tensor::<f64>::from_f64(&[1, 1, 2], &[1.0, 0.0]).unwrap();
        let t = evaluate_dataset(&[gt.clone(), half], &[gt.clone(), gt], &gs, 0.5).unwrap();
        assert_eq!(t.per_channel[0].iou, 0.75);
    }

    #[test]
    fn group_mean_over_channels() {
        // Channel IoUs 0.2, 0.4, 0.6 from 5-pixel masks with 1, 2, 3 hits of 5.
        let gs = ChannelGroups { ribs: 3, lungs: 0, clavicles: 0 };
        let gt = Tensor::<f64>::ones(&[3, 1, 5]);
        let mut p = vec![0.0; 15];
        p[0] = 1.0;
        p[5..7].fill(1.0);
        p[10..13].fill(1.0);
        let pred = Tensor::from_f64(&[3, 1, 5], &p).unwrap();
        let t = evaluate_dataset(&[pred], &[gt], &gs, 0.5).unwrap();
        assert!((t.groups.ribs.miou - 0.4).abs() < 1e-15);
    }

    #[test]
    fn json_layout() {
        let gt = Tensor::<f64>::ones(&[5, 1, 1]);
        let t = evaluate_dataset(&[gt.clone()], &[gt], &groups(), 0.5).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["groups"]["ribs"]["miou"], 1.0);
        assert_eq!(v["groups"]["clavicles"]["mdsc"], 1.0);
        assert_eq!(v["n_samples"], 1);
        assert_eq!(v["per_channel"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn channel_mismatch_errors() {
        let t = Tensor::<f64>::ones(&[4, 1, 1]);
        assert!(evaluate_dataset(&[t.clone()], &[t], &groups(), 0.5).is_err());
    }
}
