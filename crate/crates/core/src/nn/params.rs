//! Named parameter collections.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained by an optimizer.
    Weight,
    /// State that is saved with the weights but never receives a gradient
    /// (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }
}

/// Ordered, uniquely named parameters of one network.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    params: Vec<Param<T>>,
    frozen: bool,
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
            frozen: self.frozen,
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            frozen: false,
        }
    }

    fn push(&mut self, name: String, kind: ParamKind, value: Tensor<T>) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name,
            kind,
            value: Arc::new(value),
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_weight(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), ParamKind::Weight, value)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), ParamKind::Buffer, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        let p = &mut self.params[id.0];
        assert_eq!(p.value.shape(), value.shape(), "shape change for {}", p.name);
        p.value = Arc::new(value);
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    /// Frozen stores enter every tape as constants.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        if frozen {
            self.zero_grads();
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        !self.frozen && self.params[id.0].kind == ParamKind::Weight
    }

    /// Places a parameter on `tape`, linked for [`ParamStore::collect_grads`].
    pub fn var<'t>(&self, tape: &'t Tape<T>, id: ParamId) -> Var<'t, T> {
        let trainable = self.trainable(id);
        let v = tape.leaf_shared(Arc::clone(&self.params[id.0].value), trainable);
        if trainable {
            tape.link_param(self.uid, id.0, v.id());
        }
        v
    }

    /// Adds the gradients computed on `tape` into this store's grad buffers.
    pub fn collect_grads(&mut self, tape: &Tape<T>) {
        for link in tape.param_links() {
            if link.store != self.uid {
                continue;
            }
            let Some(g) = tape.grad_of(link.node) else { continue };
            let p = &mut self.params[link.index];
            match &mut p.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn num_weights(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.value.numel())
            .sum()
    }

    /// FNV-1a over names, shapes and value bits, rendered as hex.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for &d in p.value.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                eat(&v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        format!("{h:016x}")
    }
}
