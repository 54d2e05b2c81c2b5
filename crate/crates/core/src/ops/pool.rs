use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Unpadded pooling over `[N,C,H,W]`. Max routes the gradient to the first
    /// maximal element in row-major window order.
    pub fn pool2d(self, kind: PoolKind, kernel: usize, stride: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let &[n, c, h, w] = x.shape() else {
            return Err(TensorError::invalid("pool2d", format!("expected rank 4, got {:?}", x.shape())));
        };
        if kernel == 0 || stride == 0 || kernel > h || kernel > w {
            return Err(TensorError::invalid(
                "pool2d",
                format!("kernel {kernel} / stride {stride} does not fit {h}x{w}"),
            ));
        }
        let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let planes = n * c;
        let mut out = vec![T::zero(); planes * ho * wo];
        let mut arg = if kind == PoolKind::Max { vec![0usize; out.len()] } else { Vec::new() };
        let inv = T::one() / T::from_usize(kernel * kernel).unwrap();
        for pl in 0..planes {
            let src = &x.data()[pl * h * w..(pl + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = (pl * ho + oy) * wo + ox;
                    match kind {
                        PoolKind::Max => {
                            let mut best = T::neg_infinity();
                            let mut bi = 0;
                            for ki in 0..kernel {
                                for kj in 0..kernel {
                                    let idx = (oy * stride + ki) * w + ox * stride + kj;
                                    if src[idx] > best || src[idx].is_nan() {
                                        best = src[idx];
                                        bi = idx;
                                    }
                                }
                            }
                            out[o] = best;
                            arg[o] = pl * h * w + bi;
                        }
                        PoolKind::Avg => {
                            let mut s = T::zero();
                            for ki in 0..kernel {
                                for kj in 0..kernel {
                                    s += src[(oy * stride + ki) * w + ox * stride + kj];
                                }
                            }
                            out[o] = s * inv;
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, ho, wo], out)?;
        let id = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            match kind {
                PoolKind::Max => {
                    for (&gi, &a) in g.iter().zip(&arg) {
                        gx[a] += gi;
                    }
                }
                PoolKind::Avg => {
                    for pl in 0..planes {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gi = g[(pl * ho + oy) * wo + ox] * inv;
                                for ki in 0..kernel {
                                    for kj in 0..kernel {
                                        gx[pl * h * w + (oy * stride + ki) * w + ox * stride + kj] += gi;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }))
    }

    pub fn max_pool2d(self, kernel: usize, stride: usize) -> Result<Var<'t, T>> {
        self.pool2d(PoolKind::Max, kernel, stride)
    }

    pub fn avg_pool2d(self, kernel: usize, stride: usize) -> Result<Var<'t, T>> {
        self.pool2d(PoolKind::Avg, kernel, stride)
    }

    /// Mean over the spatial extent: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let &[n, c, h, w] = x.shape() else {
            return Err(TensorError::invalid("global_avg_pool", format!("expected rank 4, got {:?}", x.shape())));
        };
        let plane = h * w;
        if plane == 0 {
            return Err(TensorError::invalid("global_avg_pool", "empty spatial extent"));
        }
        let inv = T::one() / T::from_usize(plane).unwrap();
        let out: Vec<T> = x
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], out)?;
        let id = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            for (chunk, &gi) in gx.chunks_mut(plane).zip(g) {
                chunk.iter_mut().for_each(|v| *v += gi * inv);
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn square() -> Tensor<f64> {
        Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn max_and_avg() {
        let tape = Tape::<f64>::new();
        assert_eq!(tape.constant(square()).max_pool2d(2, 2).unwrap().item(), 4.0);
        assert_eq!(tape.constant(square()).avg_pool2d(2, 2).unwrap().item(), 2.5);
        assert_eq!(tape.constant(square()).global_avg_pool().unwrap().item(), 2.5);
    }

    #[test]
    fn max_tie_routes_to_first() {
        let tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::from_f64(&[1, 1, 2, 2], &[5.0, 5.0, 0.0, 0.0]).unwrap());
        let y = x.max_pool2d(2, 2).unwrap();
        tape.backward(y.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);

        // One-sided differences: only raising the first 5 moves the output at rate 1.
        let eps = 1e-3;
        let eval = |d: [f64; 4]| {
            let t = Tape::<f64>::new();
            let v: Vec<f64> = [5.0, 5.0, 0.0, 0.0].iter().zip(d).map(|(a, b)| a + b).collect();
            t.constant(Tensor::from_f64(&[1, 1, 2, 2], &v).unwrap()).max_pool2d(2, 2).unwrap().item()
        };
        let up_first = (eval([eps, 0.0, 0.0, 0.0]) - 5.0) / eps;
        let down_second = (5.0 - eval([0.0, -eps, 0.0, 0.0])) / eps;
        assert!((up_first - 1.0).abs() < 1e-9);
        assert!(down_second.abs() < 1e-9);
    }

    #[test]
    fn oversized_kernel_errors() {
        let tape = Tape::<f64>::new();
        assert!(tape.constant(square()).max_pool2d(3, 1).is_err());
    }
}
