//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! The tape ([`Tape`]) records every forward op; [`Tape::backward`] replays it
//! in reverse topological order exactly once. Training runs in `f32`; the whole
//! stack is generic over [`Element`] so gradient checks can re-run forwards in
//! `f64`.

mod adam;
mod tape;

pub use adam::{AdamConfig, OptimizerState};
pub use tape::{Op, Tape, Var};

use num_traits::{Float, FromPrimitive, NumCast};
use thiserror::Error;

/// Scalar element type of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    Float + FromPrimitive + NumCast + Default + std::fmt::Debug + std::iter::Sum + Send + Sync + 'static
{
}

impl Element for f32 {}
impl Element for f64 {}

/// Cast an `f64` constant into the element type.
#[inline]
pub(crate) fn c<E: Element>(x: f64) -> E {
    E::from(x).expect("constant out of range for element type")
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("backward: root node is not a scalar (shape {shape:?})")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("parameter `{name}` has no gradient; run backward before the optimizer step")]
    MissingGrad { name: String },
    #[error("learning-rate schedule: step {step} exceeds total_steps {total}")]
    StepOverflow { step: usize, total: usize },
}

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::BadShape { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![E::zero(); numel] }
    }

    pub fn scalar(v: E) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// Scalar value of a 0-d (or single-element) tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| F::from(x).unwrap()).collect(),
        }
    }
}

/// Identifier of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<E: Element = f32> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Vec<E>,
    pub grad_set: bool,
}

/// Named set of trainable tensors with gradient slots.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<E: Element = f32> {
    params: Vec<Param<E>>,
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> ParamId {
        let grad = vec![E::zero(); value.numel()];
        self.params.push(Param { name: name.into(), value, grad, grad_set: false });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<E> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<E> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<E>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<E>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total element count over all parameters.
    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = E::zero());
            p.grad_set = false;
        }
    }

    pub fn cast<F: Element>(&self) -> ParamSet<F> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: vec![F::zero(); p.value.numel()],
                    grad_set: false,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_invariant() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::BadShape { .. }));
    }

    #[test]
    fn param_set_roundtrip() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert_eq!(ps.get(id).value.data(), &[1.0, 2.0]);
        assert_eq!(ps.total_len(), 2);
        let ps64: ParamSet<f64> = ps.cast();
        assert_eq!(ps64.get(id).value.data(), &[1.0, 2.0]);
    }
}
