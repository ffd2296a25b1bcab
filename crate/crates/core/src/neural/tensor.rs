use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor<S>", bound(deserialize = "S: Scalar"))]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
struct RawTensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> TryFrom<RawTensor<S>> for Tensor<S> {
    type Error = Error;

    fn try_from(raw: RawTensor<S>) -> Result<Self> {
        Tensor::from_vec(raw.shape, raw.values)
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "tensor dimensions must be positive");
        Tensor {
            shape: shape.to_vec(),
            values: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid("shape", format!("{shape:?} has a zero or no dimension")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape {
                expected: shape,
                actual: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor values"));
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![value],
        }
    }

    /// Fills the tensor with `f()` in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut() -> S) -> Self {
        let mut t = Tensor::zeros(shape);
        t.values.iter_mut().for_each(|v| *v = f());
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Width of a 2-D tensor (1 for vectors).
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    /// `self · x` for a 2-D tensor.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(self.cols(), x.len(), "matvec dimension mismatch");
        (0..self.rows()).map(|i| crate::scalar::dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y` for a 2-D tensor.
    pub fn matvec_t(&self, y: &[S]) -> Vec<S> {
        assert_eq!(self.rows(), y.len(), "matvec_t dimension mismatch");
        let mut out = vec![S::zero(); self.cols()];
        for (i, &yi) in y.iter().enumerate() {
            if yi == S::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += w * yi;
            }
        }
        out
    }

    /// `self += scale * (y ⊗ x)`.
    pub fn add_outer(&mut self, y: &[S], x: &[S], scale: S) {
        assert_eq!((self.rows(), self.cols()), (y.len(), x.len()));
        for (i, &yi) in y.iter().enumerate() {
            let f = yi * scale;
            if f == S::zero() {
                continue;
            }
            for (w, &xj) in self.row_mut(i).iter_mut().zip(x) {
                *w += f * xj;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor<S>, scale: S) {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b * scale;
        }
    }

    pub fn scale(&mut self, factor: S) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = S::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A model whose trainable state is an ordered list of tensors.
///
/// Gradients use the same type, so `tensors()` of a gradient lines up with
/// `tensors_mut()` of the parameters.
pub trait Trainable<S: Scalar> {
    fn tensors(&self) -> Vec<&Tensor<S>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>>;

    /// A same-shaped copy with all trainable values set to zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized + Clone,
    {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(Tensor::fill_zero);
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<S> {
        self.tensors()
            .into_iter()
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }

    fn assign_flat(&mut self, flat: &[S]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// `self += scale * other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self, scale: S) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, scale);
        }
    }
}
