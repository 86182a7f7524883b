//! Dense n-dimensional arrays and the handful of elementwise and reduction
//! operations the layers are built from.
//!
//! Activations use the `[batch, time, channels]` layout and convolution
//! kernels use `[receptive_field, in_channels, out_channels]`; data is stored
//! row-major so the last axis is contiguous.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_like::Scalar;

use crate::error::{Error, Result};

pub mod num_like {
    use super::*;

    /// Floating point element type. `f32` is used for training and `f64`
    /// for finite-difference gradient checks.
    pub trait Scalar:
        Copy
        + Default
        + PartialOrd
        + fmt::Debug
        + fmt::Display
        + Send
        + Sync
        + Sum
        + AddAssign
        + SubAssign
        + MulAssign
        + std::ops::Add<Output = Self>
        + std::ops::Sub<Output = Self>
        + std::ops::Mul<Output = Self>
        + std::ops::Div<Output = Self>
        + std::ops::Neg<Output = Self>
        + 'static
    {
        const ZERO: Self;
        const ONE: Self;
        fn from_f64(v: f64) -> Self;
        fn to_f64(self) -> f64;
        fn from_usize(v: usize) -> Self {
            Self::from_f64(v as f64)
        }
        fn sqrt(self) -> Self;
        fn exp(self) -> Self;
        fn ln(self) -> Self;
        fn is_finite(self) -> bool;
        fn max(self, other: Self) -> Self;
    }

    macro_rules! impl_scalar {
        ($t:ty) => {
            impl Scalar for $t {
                const ZERO: Self = 0.0;
                const ONE: Self = 1.0;
                #[inline]
                fn from_f64(v: f64) -> Self {
                    v as $t
                }
                #[inline]
                fn to_f64(self) -> f64 {
                    self as f64
                }
                #[inline]
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                #[inline]
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                #[inline]
                fn ln(self) -> Self {
                    <$t>::ln(self)
                }
                #[inline]
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
                #[inline]
                fn max(self, other: Self) -> Self {
                    <$t>::max(self, other)
                }
            }
        };
    }

    impl_scalar!(f32);
    impl_scalar!(f64);
}

/// Ordered list of extents, each at least 1.
#[derive(Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.contains(&0) {
            return Err(Error::InvalidShape(dims));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }

    /// `[batch, time, channels]` view of a rank-3 activation shape.
    pub fn btc(&self) -> Option<(usize, usize, usize)> {
        match self.0[..] {
            [b, t, c] => Some((b, t, c)),
            _ => None,
        }
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Shape::new(v)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{} ", self.shape)?;
        let mut list = f.debug_list();
        list.entries(self.data.iter().take(PREVIEW));
        if self.data.len() > PREVIEW {
            list.entry(&format_args!("... {} more", self.data.len() - PREVIEW));
        }
        list.finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::with_shape(shape, data)
    }

    pub fn with_shape(shape: Shape, data: Vec<T>) -> Result<Self> {
        let expected = shape.numel();
        if data.len() != expected {
            return Err(Error::DataLength {
                len: data.len(),
                shape,
                expected,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::ZERO)
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::ZERO; self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
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
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails with [`Error::NonFinite`] if any element is NaN or infinite.
    pub fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_shape("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sum_of_squares().sqrt()
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale,
    MaxWithZero,
}

/// Right-hand operand of an elementwise op: another tensor of the same shape
/// or a scalar broadcast to every element.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

/// Applies `op` elementwise. `MaxWithZero` ignores the right-hand operand.
pub fn elementwise<T: Scalar>(op: ElementwiseOp, a: &Tensor<T>, b: Operand<'_, T>) -> Result<Tensor<T>> {
    let f: fn(T, T) -> T = match op {
        ElementwiseOp::Add => |x, y| x + y,
        ElementwiseOp::Sub => |x, y| x - y,
        ElementwiseOp::Mul | ElementwiseOp::Scale => |x, y| x * y,
        ElementwiseOp::MaxWithZero => |x, _| if x > T::ZERO { x } else { T::ZERO },
    };
    let data = match b {
        Operand::Scalar(s) => a.data.iter().map(|&x| f(x, s)).collect(),
        Operand::Tensor(t) => {
            a.expect_same_shape("elementwise", t)?;
            a.data.iter().zip(&t.data).map(|(&x, &y)| f(x, y)).collect()
        }
    };
    let out = Tensor {
        shape: a.shape.clone(),
        data,
    };
    debug_assert!(out.all_finite(), "elementwise produced non-finite output");
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    MaxWithArgmax,
}

/// Result of [`reduce`]. The reduced axis is kept with extent 1.
#[derive(Debug, Clone)]
pub struct Reduced<T> {
    pub values: Tensor<T>,
    /// Index along the reduced axis of the first maximal element, present
    /// only for [`ReduceOp::MaxWithArgmax`].
    pub argmax: Option<Vec<usize>>,
}

pub fn reduce<T: Scalar>(op: ReduceOp, t: &Tensor<T>, axis: usize) -> Result<Reduced<T>> {
    let rank = t.shape.rank();
    if axis >= rank {
        return Err(Error::AxisOutOfRange { axis, rank });
    }
    let dims = t.dims();
    let extent = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims[axis] = 1;

    let mut values = vec![T::ZERO; outer * inner];
    let mut argmax = (op == ReduceOp::MaxWithArgmax).then(|| vec![0usize; outer * inner]);
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| t.data[(o * extent + k) * inner + i];
            let slot = o * inner + i;
            match op {
                ReduceOp::Sum | ReduceOp::Mean => {
                    let mut acc = T::ZERO;
                    for k in 0..extent {
                        acc += at(k);
                    }
                    if op == ReduceOp::Mean {
                        acc = acc / T::from_usize(extent);
                    }
                    values[slot] = acc;
                }
                ReduceOp::MaxWithArgmax => {
                    let mut best = at(0);
                    let mut best_k = 0;
                    for k in 1..extent {
                        if at(k) > best {
                            best = at(k);
                            best_k = k;
                        }
                    }
                    values[slot] = best;
                    if let Some(am) = argmax.as_mut() {
                        am[slot] = best_k;
                    }
                }
            }
        }
    }
    let values = Tensor::from_vec(out_dims, values)?;
    debug_assert!(values.all_finite(), "reduce produced non-finite output");
    Ok(Reduced { values, argmax })
}
