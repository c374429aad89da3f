//! Dense row-major tensors and the primitive operations the layers build on.
//!
//! Images and feature maps use `(channels, height, width)` axis order.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
use crate::rng::{Distribution, Rng};

/// Element type of a tensor: `f32` for normal use, `f64` for gradient checks
/// and bit-reproducible runs.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

impl BinaryOp {
    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Max => {
                if b > a {
                    b
                } else {
                    a
                }
            }
        }
    }
}

/// Right-hand side of an elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Index of the first maximum along the axis, stored as a real.
    Argmax,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "dimensions must be positive".into(),
        });
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {n} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Constructs without validation; callers guarantee `product(shape) == data.len()`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        let mut coords = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&coords));
            for axis in (0..shape.len()).rev() {
                coords[axis] += 1;
                if coords[axis] < shape[axis] {
                    break;
                }
                coords[axis] = 0;
            }
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Mutable element access. The shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for axis in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.shape[axis + 1];
        }
        strides
    }

    pub fn flat_index(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.shape.len() || coords.iter().zip(&self.shape).any(|(c, d)| c >= d) {
            return Err(Error::invalid(format!(
                "coordinates {coords:?} out of bounds for shape {:?}",
                self.shape
            )));
        }
        Ok(coords.iter().zip(self.strides()).map(|(c, s)| c * s).sum())
    }

    pub fn coords(&self, mut index: usize) -> Result<Vec<usize>> {
        if index >= self.data.len() {
            return Err(Error::invalid(format!(
                "flat index {index} out of bounds for {} elements",
                self.data.len()
            )));
        }
        let mut out = vec![0; self.shape.len()];
        for (axis, stride) in self.strides().into_iter().enumerate() {
            out[axis] = index / stride;
            index %= stride;
        }
        Ok(out)
    }

    pub fn at(&self, coords: &[usize]) -> Result<T> {
        Ok(self.data[self.flat_index(coords)?])
    }

    /// Same elements under a new shape with equal element count.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape_mismatch(&self.shape, &shape));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn elementwise(&self, op: BinaryOp, rhs: Operand<'_, T>) -> Result<Self> {
        let data = match rhs {
            Operand::Scalar(b) => self.data.iter().map(|&a| op.apply(a, b)).collect(),
            Operand::Tensor(other) => {
                if other.shape != self.shape {
                    return Err(Error::shape_mismatch(&self.shape, &other.shape));
                }
                self.data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| op.apply(a, b))
                    .collect()
            }
        };
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.elementwise(BinaryOp::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.elementwise(BinaryOp::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.elementwise(BinaryOp::Mul, Operand::Tensor(other))
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// Reduces along `axis`; the result has rank one less (a rank-1 input
    /// reduces to shape `[1]`).
    pub fn reduce(&self, kind: Reduction, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for rank {}",
                self.rank()
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| self.data[(o * len + k) * inner + i];
                let v = match kind {
                    Reduction::Sum | Reduction::Mean => {
                        let mut acc = T::zero();
                        for k in 0..len {
                            acc += at(k);
                        }
                        if kind == Reduction::Mean {
                            acc / T::from_usize(len).unwrap()
                        } else {
                            acc
                        }
                    }
                    Reduction::Argmax => {
                        let mut best = 0;
                        for k in 1..len {
                            if at(k) > at(best) {
                                best = k;
                            }
                        }
                        T::from_usize(best).unwrap()
                    }
                };
                out.push(v);
            }
        }
        let mut shape: Vec<usize> = self.shape[..axis].to_vec();
        shape.extend_from_slice(&self.shape[axis + 1..]);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Self { shape, data: out })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Index of the first maximal element over the flattened data.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn random(rng: &mut Rng, dist: Distribution, shape: impl Into<Vec<usize>>) -> Result<Self> {
        random_fill(rng, dist, shape)
    }
}

/// Fills a new tensor with draws from `dist`, consuming `rng` in row-major order.
pub fn random_fill<T: Real>(
    rng: &mut Rng,
    dist: Distribution,
    shape: impl Into<Vec<usize>>,
) -> Result<Tensor<T>> {
    dist.validate()?;
    let shape = shape.into();
    check_shape(&shape)?;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.sample(dist))).collect();
    Ok(Tensor { shape, data })
}
