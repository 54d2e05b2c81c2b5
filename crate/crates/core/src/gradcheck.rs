//! Central-difference gradient verification.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Maximum relative error between analytic gradients of `f` and central
/// differences `(f(x+eps) - f(x-eps)) / 2eps`, over every element of every
/// input. The denominator is `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must return a single-element tensor and be deterministic. Run it in
/// `f64`: single precision differences are too noisy for tight tolerances.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Scalar,
    F: for<'t> Fn(&[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |probe: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&vars)?.item().to_f64_lossy())
    };

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            probe[k].data_mut()[j] = orig + T::from_f64_lossy(eps);
            let plus = eval(&probe)?;
            probe[k].data_mut()[j] = orig - T::from_f64_lossy(eps);
            let minus = eval(&probe)?;
            probe[k].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k].data()[j].to_f64_lossy();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
