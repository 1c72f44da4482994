//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable N-dimensional array in row-major order.
//! Differentiable operations live on [`Tape`]: each call computes the forward
//! value and, when the tape is recording and an input requires gradients,
//! pushes a backward step. [`Tape::backward`] replays the steps in reverse
//! execution order, accumulating gradients additively into every tensor that
//! participates.
//!
//! Two element types are supported: `f32` for training and inference, `f64`
//! for finite-difference gradient verification, where single precision is too
//! coarse to trust.

mod check;
mod conv;
mod ops;
mod pool;
mod tape;

pub use check::{finite_diff_grad, max_relative_error};
pub use tape::Tape;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Element type for tensors: `f32` or `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn max(self, other: Self) -> Self;
    fn min_positive() -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            fn min_positive() -> Self {
                <$t>::MIN_POSITIVE
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

struct TensorInner<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
}

/// Cheaply clonable handle to an immutable value plus its gradient slot.
pub struct Tensor<T: Scalar> {
    inner: Rc<TensorInner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.shape(),
            self.requires_grad()
        )
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} implies {numel} elements but {len} were provided"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// A constant (non-trainable) tensor.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::from_parts(data, shape.to_vec(), false))
    }

    /// A trainable leaf: participates in gradient accumulation.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::from_parts(data, shape.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::new(vec![T::ZERO; numel], shape)
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::new(vec![value; numel], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![value], vec![1], false)
    }

    pub(crate) fn from_parts(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(TensorInner {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Copy of the accumulated gradient, if any backward pass populated it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Same data, detached from gradient tracking.
    pub fn detach(&self) -> Tensor<T> {
        Self::from_parts(self.data().to_vec(), self.shape().to_vec(), false)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "item() requires a scalar tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.data()[0])
    }

    /// Add `delta` into the gradient slot, allocating zeros on first touch.
    pub(crate) fn add_to_grad(&self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Run `f` with the current gradient, if populated. Used by backward steps
    /// to read an output gradient without copying it.
    pub(crate) fn with_grad<R>(&self, f: impl FnOnce(&[T]) -> R) -> Option<R> {
        let guard = self.inner.grad.borrow();
        guard.as_deref().map(f)
    }
}

/// Spatial output extent of a cross-correlation:
/// `floor((extent + 2*padding - kernel) / stride) + 1`.
pub fn conv_out_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = extent + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of an unpadded pooling window, `ceil_mode` matching the
/// common deep-learning convention: a trailing partial window is kept, but
/// never one that would start outside the input.
pub fn pool_out_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    ceil_mode: bool,
) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > extent {
        return None;
    }
    let span = extent - kernel;
    let out = if ceil_mode {
        span.div_ceil(stride) + 1
    } else {
        span / stride + 1
    };
    Some(out)
}
