use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Broadcast shape under trailing-dimension alignment with size-1 stretching.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the flat index of the element of an
/// operand of shape `in_shape` that broadcasts onto it.
pub(crate) fn broadcast_index(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let mut in_strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..in_shape.len()).rev() {
        in_strides[i + offset] = if in_shape[i] == 1 { 0 } else { s };
        s *= in_shape[i];
    }
    let total: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..total {
        idx.push(flat);
        for d in (0..rank).rev() {
            counter[d] += 1;
            flat += in_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            flat -= in_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn binary(self, op: BinaryOp, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        let out_shape = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| TensorError::mismatch(name, a.shape(), b.shape()))?;
        let f = |x: T, y: T| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let same = a.shape() == b.shape();
        let (ia, ib) = if same {
            (None, None)
        } else {
            (
                Some(broadcast_index(&out_shape, a.shape())),
                Some(broadcast_index(&out_shape, b.shape())),
            )
        };
        let data: Vec<T> = match (&ia, &ib) {
            (Some(ia), Some(ib)) => ia
                .iter()
                .zip(ib)
                .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
                .collect(),
            _ => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        };
        let out = Tensor::from_vec(&out_shape, data)?;
        let (aid, bid) = (self.id(), other.id());
        Ok(self.tape().record(out, &[self, other], move |g, sink| {
            let at = |i: usize, m: &Option<Vec<usize>>| m.as_ref().map_or(i, |m| m[i]);
            if sink.wants(aid) {
                let ga = sink.slot(aid);
                for (i, &gi) in g.iter().enumerate() {
                    let d = match op {
                        BinaryOp::Add | BinaryOp::Sub => gi,
                        BinaryOp::Mul => gi * b.data()[at(i, &ib)],
                        BinaryOp::Div => gi / b.data()[at(i, &ib)],
                    };
                    ga[at(i, &ia)] += d;
                }
            }
            if sink.wants(bid) {
                let gb = sink.slot(bid);
                for (i, &gi) in g.iter().enumerate() {
                    let j = at(i, &ib);
                    let d = match op {
                        BinaryOp::Add => gi,
                        BinaryOp::Sub => -gi,
                        BinaryOp::Mul => gi * a.data()[at(i, &ia)],
                        BinaryOp::Div => {
                            let y = b.data()[j];
                            -gi * a.data()[at(i, &ia)] / (y * y)
                        }
                    };
                    gb[j] += d;
                }
            }
        }))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(BinaryOp::Div, other)
    }

    /// `self * scale + offset` elementwise.
    pub fn affine_scalar(self, scale: T, offset: T) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| v * scale + offset);
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            for (a, &b) in gx.iter_mut().zip(g) {
                *a += b * scale;
            }
        })
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        self.affine_scalar(s, T::zero())
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.affine_scalar(T::one(), c)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.affine_scalar(-T::one(), T::zero())
    }

    /// Sum of all elements, shape `[]`.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let out = Tensor::scalar(x.sum());
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            for a in gx.iter_mut() {
                *a += g[0];
            }
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().numel().max(1);
        self.sum().scale(T::one() / T::from_usize(n).unwrap())
    }

    /// Inner product with a constant tensor of the same shape.
    pub fn dot_const(self, weights: &Tensor<T>) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.shape() != weights.shape() {
            return Err(TensorError::mismatch("dot_const", x.shape(), weights.shape()));
        }
        let v: T = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let w = weights.clone();
        let id = self.id();
        Ok(self.tape().record(Tensor::scalar(v), &[self], move |g, sink| {
            let gx = sink.slot(id);
            for (a, &b) in gx.iter_mut().zip(w.data()) {
                *a += g[0] * b;
            }
        }))
    }
}
