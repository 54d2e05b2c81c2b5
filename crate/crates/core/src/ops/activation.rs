use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    /// Tanh approximation of GELU.
    Gelu,
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn activation(self, kind: Activation) -> Var<'t, T> {
        let x = self.value();
        let zero = T::zero();
        let one = T::one();
        let slope = match kind {
            Activation::LeakyRelu(s) => T::from_f64_lossy(s),
            _ => zero,
        };
        let c0 = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
        let c1 = T::from_f64_lossy(0.044715);
        let half = T::from_f64_lossy(0.5);
        let three = T::from_f64_lossy(3.0);
        let out = x.map(|v| match kind {
            Activation::Relu => if v < zero { zero } else { v },
            Activation::LeakyRelu(_) => if v > zero { v } else { v * slope },
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Gelu => half * v * (one + (c0 * (v + c1 * v * v * v)).tanh()),
        });
        let y = std::sync::Arc::new(out.clone());
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            for i in 0..g.len() {
                let (xv, yv) = (x.data()[i], y.data()[i]);
                let d = match kind {
                    Activation::Relu => if xv > zero { one } else { zero },
                    Activation::LeakyRelu(_) => if xv > zero { one } else { slope },
                    Activation::Sigmoid => yv * (one - yv),
                    Activation::Tanh => one - yv * yv,
                    Activation::Gelu => {
                        let u = c0 * (xv + c1 * xv * xv * xv);
                        let t = u.tanh();
                        half * (one + t) + half * xv * (one - t * t) * c0 * (one + three * c1 * xv * xv)
                    }
                };
                gx[i] += g[i] * d;
            }
        })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.activation(Activation::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t, T> {
        self.activation(Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.activation(Activation::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.activation(Activation::Tanh)
    }

    pub fn gelu(self) -> Var<'t, T> {
        self.activation(Activation::Gelu)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(TensorError::invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = vec![T::zero(); x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| x.data()[at(k)]).fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for k in 0..len {
                    let e = (x.data()[at(k)] - m).exp();
                    out[at(k)] = e;
                    s += e;
                }
                for k in 0..len {
                    out[at(k)] /= s;
                }
            }
        }
        let out = Tensor::from_vec(shape, out)?;
        let y = std::sync::Arc::new(out.clone());
        let id = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: T = (0..len).map(|k| g[at(k)] * y.data()[at(k)]).sum();
                    for k in 0..len {
                        gx[at(k)] += y.data()[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
        }))
    }
}
