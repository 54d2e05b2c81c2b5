use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Exponential moving averages of per-channel batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of train-mode updates folded in so far.
    pub updates: u64,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            updates: 0,
        }
    }

    /// `running = (1 - momentum) * running + momentum * batch`, using the
    /// unbiased batch variance.
    pub fn update(&mut self, batch: &BatchMoments<T>, momentum: f64) {
        let m = T::from_f64_lossy(momentum);
        let keep = T::one() - m;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + m * batch.mean[c];
            self.var[c] = keep * self.var[c] + m * batch.unbiased_var[c];
        }
        self.updates += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub unbiased_var: Vec<T>,
}

pub enum BatchNormMode<'a, T> {
    /// Normalise with batch statistics and fold them into `stats`.
    Train { stats: &'a mut RunningStats<T>, momentum: f64 },
    /// Normalise with previously accumulated statistics.
    Eval(&'a RunningStats<T>),
}

fn check_affine<T: Scalar>(op: &'static str, t: &Tensor<T>, n: usize) -> Result<()> {
    if t.shape() != [n] {
        return Err(TensorError::mismatch(op, t.shape(), &[n]));
    }
    Ok(())
}

/// Shared backward of an affine-normalised group with batch statistics.
/// `xhat` and `g` hold the group's elements; writes `dx` contributions.
fn normalised_backward<T: Scalar>(g: &[T], xhat: &[T], gamma: T, inv_std: T, dx: &mut [T]) {
    let m = T::from_usize(g.len()).unwrap();
    let mg = g.iter().copied().sum::<T>() / m;
    let mgx = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / m;
    let k = gamma * inv_std;
    for i in 0..g.len() {
        dx[i] += k * (g[i] - mg - xhat[i] * mgx);
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Batch normalisation of `[N,C,H,W]` per channel.
    pub fn batch_norm2d(
        self,
        scale: Var<'t, T>,
        shift: Var<'t, T>,
        eps: f64,
        mode: BatchNormMode<'_, T>,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let &[n, c, h, w] = x.shape() else {
            return Err(TensorError::invalid("batch_norm2d", format!("expected rank 4, got {:?}", x.shape())));
        };
        let (gamma, beta) = (scale.value(), shift.value());
        check_affine("batch_norm2d", &gamma, c)?;
        check_affine("batch_norm2d", &beta, c)?;
        let plane = h * w;
        let count = n * plane;
        let eps_t = T::from_f64_lossy(eps);
        let train = matches!(mode, BatchNormMode::Train { .. });
        let (mean, var) = match &mode {
            BatchNormMode::Train { .. } => {
                if count == 0 {
                    return Err(TensorError::invalid("batch_norm2d", "empty batch"));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let inv = T::one() / T::from_usize(count).unwrap();
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += x.data()[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                    }
                    let mu = s * inv;
                    let mut v = T::zero();
                    for b in 0..n {
                        for &val in &x.data()[(b * c + ch) * plane..][..plane] {
                            v += (val - mu) * (val - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = v * inv;
                }
                (mean, var)
            }
            BatchNormMode::Eval(stats) => {
                if stats.updates == 0 {
                    return Err(TensorError::invalid(
                        "batch_norm2d",
                        "eval mode used before any running statistics were accumulated",
                    ));
                }
                if stats.mean.len() != c {
                    return Err(TensorError::mismatch("batch_norm2d", &[stats.mean.len()], &[c]));
                }
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gamma.data()[ch] * xh + beta.data()[ch];
                }
            }
        }
        if let BatchNormMode::Train { stats, momentum } = mode {
            if stats.mean.len() != c {
                return Err(TensorError::mismatch("batch_norm2d", &[stats.mean.len()], &[c]));
            }
            let bessel = if count > 1 {
                T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
            } else {
                T::one()
            };
            let unbiased_var = var.iter().map(|&v| v * bessel).collect();
            stats.update(&BatchMoments { mean, var, unbiased_var }, momentum);
        }
        let out = Tensor::from_vec(x.shape(), out)?;
        let (xid, gid, bid) = (self.id(), scale.id(), shift.id());
        Ok(self.tape().record(out, &[self, scale, shift], move |g, sink| {
            if sink.wants(gid) || sink.wants(bid) {
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            dg[ch] += g[i] * xhat[i];
                            db[ch] += g[i];
                        }
                    }
                }
                sink.accumulate(gid, &dg);
                sink.accumulate(bid, &db);
            }
            if !sink.wants(xid) {
                return;
            }
            let dx = sink.slot(xid);
            if train {
                let mut gch = Vec::with_capacity(count);
                let mut xch = Vec::with_capacity(count);
                let mut dch = vec![T::zero(); count];
                for ch in 0..c {
                    gch.clear();
                    xch.clear();
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        gch.extend_from_slice(&g[off..off + plane]);
                        xch.extend_from_slice(&xhat[off..off + plane]);
                    }
                    dch.fill(T::zero());
                    normalised_backward(&gch, &xch, gamma.data()[ch], inv_std[ch], &mut dch);
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        for (d, &v) in dx[off..off + plane].iter_mut().zip(&dch[b * plane..(b + 1) * plane]) {
                            *d += v;
                        }
                    }
                }
            } else {
                for b in 0..n {
                    for ch in 0..c {
                        let k = gamma.data()[ch] * inv_std[ch];
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            dx[i] += g[i] * k;
                        }
                    }
                }
            }
        }))
    }

    /// Layer normalisation over the last axis with per-feature scale/shift.
    pub fn layer_norm(self, scale: Var<'t, T>, shift: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| TensorError::invalid("layer_norm", "rank-0 input"))?;
        let (gamma, beta) = (scale.value(), shift.value());
        check_affine("layer_norm", &gamma, d)?;
        check_affine("layer_norm", &beta, d)?;
        let rows = x.numel() / d.max(1);
        let eps_t = T::from_f64_lossy(eps);
        let inv_d = T::one() / T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let is = T::one() / (var + eps_t).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mu) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = gamma.data()[j] * xh + beta.data()[j];
            }
        }
        let out = Tensor::from_vec(x.shape(), out)?;
        let (xid, gid, bid) = (self.id(), scale.id(), shift.id());
        Ok(self.tape().record(out, &[self, scale, shift], move |g, sink| {
            if sink.wants(gid) || sink.wants(bid) {
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for r in 0..rows {
                    for j in 0..d {
                        dg[j] += g[r * d + j] * xhat[r * d + j];
                        db[j] += g[r * d + j];
                    }
                }
                sink.accumulate(gid, &dg);
                sink.accumulate(bid, &db);
            }
            if !sink.wants(xid) {
                return;
            }
            let dx = sink.slot(xid);
            let mut gg = vec![T::zero(); d];
            for r in 0..rows {
                // Scale enters per feature, so fold it into the upstream gradient.
                for j in 0..d {
                    gg[j] = g[r * d + j] * gamma.data()[j];
                }
                normalised_backward(&gg, &xhat[r * d..(r + 1) * d], T::one(), inv_std[r], &mut dx[r * d..(r + 1) * d]);
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn constant_input_normalises_to_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[2, 3, 4, 4], 5.0));
        let mut stats = RunningStats::new(3);
        let y = x
            .batch_norm2d(
                tape.constant(Tensor::ones(&[3])),
                tape.constant(Tensor::zeros(&[3])),
                1e-5,
                BatchNormMode::Train { stats: &mut stats, momentum: 0.1 },
            )
            .unwrap();
        assert!(y.value().data().iter().all(|v| v.abs() < 1e-9));
        assert!(stats.mean.iter().all(|&m| (m - 0.5).abs() < 1e-12));
        assert_eq!(stats.updates, 1);
    }

    #[test]
    fn eval_without_stats_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 2, 2]));
        let stats = RunningStats::new(2);
        let r = x.batch_norm2d(
            tape.constant(Tensor::ones(&[2])),
            tape.constant(Tensor::zeros(&[2])),
            1e-5,
            BatchNormMode::Eval(&stats),
        );
        assert!(r.is_err());
    }

    #[test]
    fn layer_norm_of_one_two_three() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap());
        let y = x
            .layer_norm(tape.constant(Tensor::ones(&[3])), tape.constant(Tensor::zeros(&[3])), 0.0)
            .unwrap()
            .value();
        // mean 2, biased variance 2/3 -> (x - 2) * sqrt(3/2)
        let k = (1.5f64).sqrt();
        let want = [-k, 0.0, k];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
