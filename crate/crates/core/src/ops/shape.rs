use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::{numel_checked, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source index in the input for every output element of a permutation.
fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..total {
        idx.push(flat);
        for d in (0..rank).rev() {
            counter[d] += 1;
            flat += src_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            flat -= src_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        if numel_checked(shape)? != x.numel() {
            return Err(TensorError::mismatch("reshape", x.shape(), shape));
        }
        let out = (*x).clone().reshaped(shape)?;
        let id = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| sink.accumulate(id, g)))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::invalid("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
        let idx = permute_index(x.shape(), perm);
        let out = Tensor::from_vec(&out_shape, idx.iter().map(|&i| x.data()[i]).collect())?;
        let id = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            for (&i, &gv) in idx.iter().zip(g) {
                gx[i] += gv;
            }
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(self) -> Result<Var<'t, T>> {
        let r = self.value().rank();
        if r < 2 {
            return Err(TensorError::invalid("transpose_last", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(&perm)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = vals[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        for v in &vals[1..] {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(TensorError::mismatch("concat", &base, s));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let widths: Vec<usize> = vals.iter().map(|v| v.shape()[axis] * inner).collect();
        let total_w: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total_w);
        for o in 0..outer {
            for (v, &wd) in vals.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[o * wd..(o + 1) * wd]);
            }
        }
        let mut shape = base;
        shape[axis] = vals.iter().map(|v| v.shape()[axis]).sum();
        let out = Tensor::from_vec(&shape, out)?;
        let ids: Vec<_> = parts.iter().map(|p| p.id()).collect();
        Ok(first.tape().record(out, parts, move |g, sink| {
            let mut off = 0;
            for (&id, &wd) in ids.iter().zip(&widths) {
                if sink.wants(id) {
                    let gx = sink.slot(id);
                    for o in 0..outer {
                        let src = &g[o * total_w + off..o * total_w + off + wd];
                        for (a, &b) in gx[o * wd..(o + 1) * wd].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                off += wd;
            }
        }))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(TensorError::invalid("slice", format!("{start}..{end} on axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let (lo, wd) = (start * inner, (end - start) * inner);
        let mut out = Vec::with_capacity(outer * wd);
        for o in 0..outer {
            out.extend_from_slice(&x.data()[o * full + lo..o * full + lo + wd]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = end - start;
        let out = Tensor::from_vec(&out_shape, out)?;
        let id = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            for o in 0..outer {
                for (a, &b) in gx[o * full + lo..o * full + lo + wd].iter_mut().zip(&g[o * wd..(o + 1) * wd]) {
                    *a += b;
                }
            }
        }))
    }
}
