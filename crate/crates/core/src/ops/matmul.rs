use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

fn split(shape: &[usize]) -> Option<(Option<usize>, usize, usize)> {
    match *shape {
        [m, k] => Some((None, m, k)),
        [b, m, k] => Some((Some(b), m, k)),
        _ => None,
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// `[M,K]·[K,N]`, with an optional leading batch extent on either side
    /// (a missing batch extent broadcasts).
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let err = || TensorError::mismatch("matmul", a.shape(), b.shape());
        let (ba, m, k) = split(a.shape()).ok_or_else(err)?;
        let (bb, k2, n) = split(b.shape()).ok_or_else(err)?;
        if k != k2 {
            return Err(err());
        }
        let batch = match (ba, bb) {
            (Some(x), Some(y)) if x != y => return Err(err()),
            (Some(x), _) | (None, Some(x)) => Some(x),
            (None, None) => None,
        };
        let nb = batch.unwrap_or(1);
        let (sa, sb) = (if ba.is_some() { m * k } else { 0 }, if bb.is_some() { k * n } else { 0 });
        let mut out = vec![T::zero(); nb * m * n];
        for i in 0..nb {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &a.data()[i * sa..],
                (k as isize, 1),
                &b.data()[i * sb..],
                (n as isize, 1),
                T::zero(),
                &mut out[i * m * n..],
                (n as isize, 1),
            );
        }
        let shape = match batch {
            Some(x) => vec![x, m, n],
            None => vec![m, n],
        };
        let (aid, bid) = (self.id(), other.id());
        Ok(self.tape().record(Tensor::from_vec(&shape, out)?, &[self, other], move |g, sink| {
            if sink.wants(aid) {
                let ga = sink.slot(aid);
                for i in 0..nb {
                    // ga += g · bᵀ
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &g[i * m * n..],
                        (n as isize, 1),
                        &b.data()[i * sb..],
                        (1, n as isize),
                        T::one(),
                        &mut ga[i * sa..],
                        (k as isize, 1),
                    );
                }
            }
            if sink.wants(bid) {
                let gb = sink.slot(bid);
                for i in 0..nb {
                    // gb += aᵀ · g
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        &a.data()[i * sa..],
                        (1, k as isize),
                        &g[i * m * n..],
                        (n as isize, 1),
                        T::one(),
                        &mut gb[i * sb..],
                        (n as isize, 1),
                    );
                }
            }
        }))
    }
}
