//! Segmentation and adversarial losses.

use crate::error::{Result, TensorError};
use crate::ops::sigmoid;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Probability clamp applied before every logarithm in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy between probabilities and {0,1} targets.
///
/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`; the gradient is the
/// derivative evaluated at the clamped value, so saturated predictions keep
/// receiving a signal.
pub fn bce_loss<'t, T: Scalar>(pred: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    let p = pred.value();
    if p.shape() != target.shape() {
        return Err(TensorError::mismatch("bce_loss", p.shape(), target.shape()));
    }
    let lo = T::from_f64_lossy(BCE_EPS);
    let hi = T::one() - lo;
    let m = T::from_usize(p.numel().max(1)).unwrap();
    let one = T::one();
    // NaN must survive the clamp so the trainers see it.
    let clamp = move |v: T| if v.is_nan() { v } else { v.max(lo).min(hi) };
    let total: T = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(&pv, &t)| {
            let pc = clamp(pv);
            -(t * pc.ln() + (one - t) * (one - pc).ln())
        })
        .sum();
    let t = target.clone();
    let id = pred.id();
    Ok(pred.tape().record(Tensor::scalar(total / m), &[pred], move |g, sink| {
        let gx = sink.slot(id);
        let k = g[0] / m;
        for ((d, &pv), &tv) in gx.iter_mut().zip(p.data()).zip(t.data()) {
            let pc = clamp(pv);
            *d += k * (-(tv / pc) + (one - tv) / (one - pc));
        }
    }))
}

fn dice_groups(shape: &[usize]) -> usize {
    if shape.len() >= 3 {
        shape[0] * shape[1]
    } else {
        1
    }
}

/// Soft Dice loss `1 - (2·Σpt + s)/(Σp + Σt + s)`, computed per (sample,
/// channel) for inputs of rank >= 3 and averaged; lower-rank inputs form a
/// single group.
pub fn dice_loss<'t, T: Scalar>(pred: Var<'t, T>, target: &Tensor<T>, smooth: f64) -> Result<Var<'t, T>> {
    let p = pred.value();
    if p.shape() != target.shape() {
        return Err(TensorError::mismatch("dice_loss", p.shape(), target.shape()));
    }
    let groups = dice_groups(p.shape());
    let len = p.numel() / groups.max(1);
    let s = T::from_f64_lossy(smooth);
    let two = T::from_f64_lossy(2.0);
    let mut sums = Vec::with_capacity(groups);
    let mut total = T::zero();
    for gi in 0..groups {
        let pg = &p.data()[gi * len..(gi + 1) * len];
        let tg = &target.data()[gi * len..(gi + 1) * len];
        let inter: T = pg.iter().zip(tg).map(|(&a, &b)| a * b).sum();
        let denom = pg.iter().copied().sum::<T>() + tg.iter().copied().sum::<T>() + s;
        total += T::one() - (two * inter + s) / denom;
        sums.push((two * inter + s, denom));
    }
    let ng = T::from_usize(groups).unwrap();
    let t = target.clone();
    let id = pred.id();
    Ok(pred.tape().record(Tensor::scalar(total / ng), &[pred], move |g, sink| {
        let gx = sink.slot(id);
        let k = g[0] / ng;
        for (gi, &(num, den)) in sums.iter().enumerate() {
            let den2 = den * den;
            for j in gi * len..(gi + 1) * len {
                // d/dp [1 - num/den] = -(2t·den - num)/den²
                gx[j] += k * -((two * t.data()[j] * den - num) / den2);
            }
        }
    }))
}

/// Unit-weighted BCE + Dice (smooth = 1).
pub fn seg_loss<'t, T: Scalar>(pred: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    let b = bce_loss(pred, target)?;
    let d = dice_loss(pred, target, 1.0)?;
    b.add(d)
}

/// Mean of `BCE(sigmoid(z), target)` over all logits, via the stable softplus
/// form.
pub fn bce_with_logits<'t, T: Scalar>(logits: Var<'t, T>, target: f64) -> Var<'t, T> {
    let z = logits.value();
    let t = T::from_f64_lossy(target);
    let one = T::one();
    let m = T::from_usize(z.numel().max(1)).unwrap();
    let softplus = |v: T| v.max(T::zero()) + (one + (-v.abs()).exp()).ln();
    let total: T = z.data().iter().map(|&v| softplus(v) - t * v).sum();
    let id = logits.id();
    logits.tape().record(Tensor::scalar(total / m), &[logits], move |g, sink| {
        let gx = sink.slot(id);
        let k = g[0] / m;
        for (d, &v) in gx.iter_mut().zip(z.data()) {
            *d += k * (sigmoid(v) - t);
        }
    })
}

/// `½·[BCE(σ(real), 1) + BCE(σ(fake), 0)]`. Callers pass fake logits computed
/// from a detached generator output.
pub fn discriminator_loss<'t, T: Scalar>(real: Var<'t, T>, fake: Var<'t, T>) -> Result<Var<'t, T>> {
    if real.shape() != fake.shape() {
        return Err(TensorError::mismatch("discriminator_loss", &real.shape(), &fake.shape()));
    }
    let r = bce_with_logits(real, 1.0);
    let f = bce_with_logits(fake, 0.0);
    Ok(r.add(f)?.scale(T::from_f64_lossy(0.5)))
}

/// Non-saturating generator objective `BCE(σ(fake), 1)`.
pub fn generator_adv_loss<'t, T: Scalar>(fake: Var<'t, T>) -> Var<'t, T> {
    bce_with_logits(fake, 1.0)
}

/// Both adversarial objectives over patch logit maps. The discriminator loss
/// sees the fake logits detached, so it never reaches the generator graph.
pub fn gan_losses<'t, T: Scalar>(real: Var<'t, T>, fake: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let d = discriminator_loss(real, fake.detach())?;
    Ok((d, generator_adv_loss(fake)))
}
