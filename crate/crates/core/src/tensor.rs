//! Dense time-major tensor storage and shape algebra.
//!
//! Every value flowing through the framework is a [`Tensor5`] with layout
//! `[T, B, C, H, W]` (time, batch, channel, row, col), stored contiguously in
//! row-major order. `T` is an independent dimension only for spiking neuron
//! layers; all other kernels treat the leading `(T, B)` pair as one folded
//! batch axis of length `T*B`, which is a reinterpretation of the same buffer
//! rather than a copy.

use std::fmt;
use std::iter::Sum;

use crate::error::{Error, Result};

/// Element type of all tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + Sum
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn max_val(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x as f32
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
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn max_val(self, other: Self) -> Self {
        self.max(other)
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn ln(self) -> Self {
        self.ln()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn max_val(self, other: Self) -> Self {
        self.max(other)
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
}

/// Shorthand for lifting an `f64` literal into the working precision.
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x)
}

/// Shape of a [`Tensor5`]: `(T, B, C, H, W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape5 {
    pub t: usize,
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5 {
    pub fn new(t: usize, b: usize, c: usize, h: usize, w: usize) -> Self {
        Self { t, b, c, h, w }
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.t * self.b * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of the folded `(T, B)` axis used by non-neuron kernels.
    pub fn folded_batch(&self) -> usize {
        self.t * self.b
    }

    /// Elements per spatial plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements per time step.
    pub fn step(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    /// Same shape with different spatial extent.
    pub fn with_spatial(&self, h: usize, w: usize) -> Self {
        Self { h, w, ..*self }
    }

    /// Same shape with a different channel count.
    pub fn with_channels(&self, c: usize) -> Self {
        Self { c, ..*self }
    }

    /// Scalar shape `[1,1,1,1,1]`.
    pub fn scalar() -> Self {
        Self::new(1, 1, 1, 1, 1)
    }
}

impl fmt::Display for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{},{}]", self.t, self.b, self.c, self.h, self.w)
    }
}

/// Dense real-valued tensor in time-major `[T,B,C,H,W]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor5<T> {
    shape: Shape5,
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(shape: Shape5) -> Self {
        Self {
            shape,
            data: vec![T::ZERO; shape.len()],
        }
    }

    pub fn filled(shape: Shape5, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn ones(shape: Shape5) -> Self {
        Self::filled(shape, T::ONE)
    }

    pub fn from_vec(shape: Shape5, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Scalar tensor `[1,1,1,1,1]` holding one value.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: Shape5::scalar(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
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

    /// Flat index of element `(t, b, c, h, w)`.
    #[inline]
    pub fn idx(&self, t: usize, b: usize, c: usize, h: usize, w: usize) -> usize {
        (((t * self.shape.b + b) * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, t: usize, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx(t, b, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, b: usize, c: usize, h: usize, w: usize) -> &mut T {
        let i = self.idx(t, b, c, h, w);
        &mut self.data[i]
    }

    /// The `H*W` plane at folded-batch index `tb` and channel `c`.
    ///
    /// Indexing by `tb in 0..t*b` is the zero-copy `(T,B) -> TB` fold.
    #[inline]
    pub fn plane(&self, tb: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (tb * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, tb: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (tb * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Contiguous slice for time step `t` (length `B*C*H*W`).
    #[inline]
    pub fn step(&self, t: usize) -> &[T] {
        let s = self.shape.step();
        &self.data[t * s..(t + 1) * s]
    }

    #[inline]
    pub fn step_mut(&mut self, t: usize) -> &mut [T] {
        let s = self.shape.step();
        &mut self.data[t * s..(t + 1) * s]
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Sum of all elements.
    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Convert elementwise to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            shape: self.shape,
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }

    /// In-place `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                left: self.shape,
                right: other.shape,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }
}

/// Pooling geometry: stride `s` and window `k` (defaults to `k = s`), no padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub stride: usize,
    pub window: usize,
}

impl PoolSpec {
    /// Window equal to stride, the common downsampling case.
    pub fn square(stride: usize) -> Result<Self> {
        Self::new(stride, stride)
    }

    pub fn new(stride: usize, window: usize) -> Result<Self> {
        if stride == 0 || window == 0 {
            return Err(Error::ZeroStride);
        }
        Ok(Self { stride, window })
    }

    /// Output extent along one spatial axis: `floor((n - k)/s) + 1`.
    pub fn out_extent(&self, n: usize) -> Result<usize> {
        if self.window > n {
            return Err(Error::WindowTooLarge {
                window: self.window,
                height: n,
                width: n,
            });
        }
        Ok((n - self.window) / self.stride + 1)
    }

    /// Output spatial dims for an input plane, erroring if the window does not fit.
    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window > h || self.window > w {
            return Err(Error::WindowTooLarge {
                window: self.window,
                height: h,
                width: w,
            });
        }
        Ok(((h - self.window) / self.stride + 1, (w - self.window) / self.stride + 1))
    }
}
