use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Result, TensorError};
use crate::rng::seeded;
use crate::scalar::Scalar;

/// Initializer accepted by [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    Uniform { lo: f64, hi: f64, seed: u64 },
    Normal { mean: f64, std: f64, seed: u64 },
}

/// Dense row-major array. `shape.iter().product() == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel_checked(shape: &[usize]) -> Result<usize> {
    let mut n: usize = 1;
    for &d in shape {
        n = n
            .checked_mul(d)
            .ok_or_else(|| TensorError::Overflow { shape: shape.to_vec() })?;
    }
    let bytes_ok = n.checked_mul(16).is_some_and(|b| b <= isize::MAX as usize);
    if !bytes_ok {
        return Err(TensorError::Overflow { shape: shape.to_vec() });
    }
    Ok(n)
}

impl<T: Scalar> Tensor<T> {
    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        let n = numel_checked(shape)?;
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Constant(c) => vec![T::from_f64_lossy(c); n],
            Init::Uniform { lo, hi, seed } => {
                if !(lo < hi) {
                    return Err(TensorError::invalid("create", "uniform requires lo < hi"));
                }
                let dist = Uniform::new(lo, hi)
                    .map_err(|e| TensorError::invalid("create", e.to_string()))?;
                let mut rng = seeded(seed);
                (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect()
            }
            Init::Normal { mean, std, seed } => {
                let dist = Normal::new(mean, std)
                    .map_err(|e| TensorError::invalid("create", e.to_string()))?;
                let mut rng = seeded(seed);
                (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect()
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::create(shape, Init::Zeros).expect("shape fits in memory")
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::create(shape, Init::Ones).expect("shape fits in memory")
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = numel_checked(shape).expect("shape fits in memory");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = numel_checked(shape)?;
        if n != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    /// Samples uniformly from `[lo, hi)` using an existing stream.
    pub fn uniform_with(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n = numel_checked(shape).expect("shape fits in memory");
        let dist = Uniform::new(lo, hi).expect("lo < hi");
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect(),
        }
    }

    pub fn normal_with(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Self {
        let n = numel_checked(shape).expect("shape fits in memory");
        let dist = Normal::new(mean, std).expect("finite std");
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n = numel_checked(shape)?;
        if n != self.data.len() {
            return Err(TensorError::mismatch("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }

    /// Contiguous slice along the leading axis: rows `start..end` of dim 0.
    pub fn narrow_batch(&self, start: usize, end: usize) -> Self {
        assert!(!self.shape.is_empty() && start <= end && end <= self.shape[0]);
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * inner..end * inner].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::invalid("stack", "no tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::mismatch("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}
