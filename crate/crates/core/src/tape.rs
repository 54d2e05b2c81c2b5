//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every differentiable operation in execution order. Each
//! node owns its forward value and, if any input requires a gradient, a
//! backward closure. [`Tape::backward`] walks the nodes in exact reverse order
//! and accumulates gradients additively. A tape is single use: build a new
//! one for every forward pass.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn FnOnce(&[T], &mut GradSink<'_, T>)>;

/// Mutable view of the gradient buffers handed to a backward closure.
pub struct GradSink<'a, T> {
    grads: &'a mut [Option<Vec<T>>],
    requires: &'a [bool],
    numels: &'a [usize],
}

impl<T: Scalar> GradSink<'_, T> {
    pub fn wants(&self, id: NodeId) -> bool {
        self.requires[id.0]
    }

    /// Zero-initialised (on first touch) gradient buffer of `id`.
    pub fn slot(&mut self, id: NodeId) -> &mut [T] {
        let n = self.numels[id.0];
        self.grads[id.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn accumulate(&mut self, id: NodeId, g: &[T]) {
        if !self.requires[id.0] {
            return;
        }
        debug_assert_eq!(g.len(), self.numels[id.0]);
        match &mut self.grads[id.0] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn accumulate_owned(&mut self, id: NodeId, g: Vec<T>) {
        if !self.requires[id.0] {
            return;
        }
        debug_assert_eq!(g.len(), self.numels[id.0]);
        match &mut self.grads[id.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamLink {
    pub store: u64,
    pub index: usize,
    pub node: NodeId,
}

struct Inner<T> {
    values: Vec<Arc<Tensor<T>>>,
    requires: Vec<bool>,
    numels: Vec<usize>,
    backward: Vec<Option<BackwardFn<T>>>,
    grads: Vec<Option<Vec<T>>>,
    params: Vec<ParamLink>,
    consumed: bool,
}

pub struct Tape<T> {
    inner: RefCell<Inner<T>>,
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.values.len())
            .field("consumed", &inner.consumed)
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a tape.
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id.0)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                values: Vec::new(),
                requires: Vec::new(),
                numels: Vec::new(),
                backward: Vec::new(),
                grads: Vec::new(),
                params: Vec::new(),
                consumed: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Arc<Tensor<T>>, requires: bool, backward: Option<BackwardFn<T>>) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        let id = NodeId(inner.values.len());
        inner.numels.push(value.numel());
        inner.values.push(value);
        inner.requires.push(requires);
        inner.backward.push(backward);
        inner.grads.push(None);
        Var { tape: self, id }
    }

    /// Leaf that accumulates a gradient.
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Arc::new(value), true, None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Arc::new(value), false, None)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, requires_grad, None)
    }

    pub(crate) fn link_param(&self, store: u64, index: usize, node: NodeId) {
        self.inner
            .borrow_mut()
            .params
            .push(ParamLink { store, index, node });
    }

    pub(crate) fn param_links(&self) -> Vec<ParamLink> {
        self.inner.borrow().params.clone()
    }

    /// Records an operation. The closure receives the upstream gradient of the
    /// new node and a sink for its inputs' gradients. It is dropped unused when
    /// no input requires a gradient.
    pub fn record<'t>(
        &'t self,
        value: Tensor<T>,
        inputs: &[Var<'t, T>],
        backward: impl FnOnce(&[T], &mut GradSink<'_, T>) + 'static,
    ) -> Var<'t, T> {
        let requires = {
            let inner = self.inner.borrow();
            inputs.iter().any(|v| inner.requires[v.id.0])
        };
        let f: Option<BackwardFn<T>> = if requires {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(Arc::new(value), requires, f)
    }

    pub fn value_of(&self, id: NodeId) -> Arc<Tensor<T>> {
        Arc::clone(&self.inner.borrow().values[id.0])
    }

    pub fn requires_grad_of(&self, id: NodeId) -> bool {
        self.inner.borrow().requires[id.0]
    }

    pub fn grad_of(&self, id: NodeId) -> Option<Tensor<T>> {
        let inner = self.inner.borrow();
        inner.grads[id.0].as_ref().map(|g| {
            Tensor::from_vec(inner.values[id.0].shape(), g.clone()).expect("grad matches value shape")
        })
    }

    /// Back-propagates from a single-element loss. Gradients of every node
    /// reachable from `loss` that requires one are populated.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let (mut grads, mut fns, requires, numels) = {
            let mut inner = self.inner.borrow_mut();
            if inner.consumed {
                return Err(TensorError::TapeConsumed);
            }
            let shape = inner.values[loss.id.0].shape().to_vec();
            if inner.values[loss.id.0].numel() != 1 {
                return Err(TensorError::NonScalarLoss(shape));
            }
            inner.consumed = true;
            (
                std::mem::take(&mut inner.grads),
                std::mem::take(&mut inner.backward),
                inner.requires.clone(),
                inner.numels.clone(),
            )
        };
        if requires[loss.id.0] {
            grads[loss.id.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.id.0).rev() {
            let Some(f) = fns[i].take() else { continue };
            let Some(g) = grads[i].take() else { continue };
            {
                let mut sink = GradSink {
                    grads: &mut grads,
                    requires: &requires,
                    numels: &numels,
                };
                f(&g, &mut sink);
            }
            grads[i] = Some(g);
        }
        self.inner.borrow_mut().grads = grads;
        Ok(())
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().values[self.id.0].shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad_of(self.id)
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> T {
        self.value().item()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.leaf_shared(self.value(), false)
    }
}
