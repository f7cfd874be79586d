//! Dense `(n, c, h, w)` tensors and the seeded random stream.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::par;

/// Floating-point sample type. Implemented for `f32` (training) and `f64`
/// (oracles and gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Elementwise binary operator for [`ewise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
}

/// Dense 4-D array in row-major `(n, c, h, w)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

fn checked_len(shape: [usize; 4]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(Error::InvalidDims(format!(
            "all dimensions must be >= 1, got {shape:?}"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidDims(format!("index space of {shape:?} overflows")))
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::full([n, c, h, w], T::zero())
    }

    pub fn full(shape: [usize; 4], value: T) -> Result<Self> {
        let len = checked_len(shape)?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len = checked_len(shape)?;
        if data.len() != len {
            return Err(Error::InvalidDims(format!(
                "data length {} does not match shape {shape:?} ({len})",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, i, j)` at every index.
    pub fn from_fn(
        shape: [usize; 4],
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        let len = checked_len(shape)?;
        let mut data = Vec::with_capacity(len);
        let [n, c, h, w] = shape;
        for b in 0..n {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        data.push(f(b, ch, i, j));
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// Same shape, all zeros. Cannot fail since `self` is already valid.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape,
            data: vec![T::zero(); self.data.len()],
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// In-place access. Used by the optimizer and by kernels that fill a
    /// freshly allocated output.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + i) * self.shape[3] + j
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> T {
        self.data[self.index(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: T) {
        let k = self.index(n, c, i, j);
        self.data[k] = v;
    }

    /// The `h·w` slab for batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let start = (n * self.shape[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.plane_len();
        let start = (n * self.shape[1] + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                got: other.shape,
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        ewise(Op::Add, self, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        ewise(Op::Sub, self, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        ewise(Op::Mul, self, other)
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(self, what: &str) -> Result<Self> {
        if let Some(k) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{what}: element {k} is {:?}",
                self.data[k]
            )));
        }
        Ok(self)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Max over elements of `|self - other|`, in f64.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max))
    }

    /// Batch item `b` as a `(1, c, h, w)` tensor.
    pub fn item(&self, b: usize) -> Self {
        let per = self.shape[1] * self.plane_len();
        Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[b * per..(b + 1) * per].to_vec(),
        }
    }

    /// Concatenates equally shaped tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack an empty list".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::ShapeMismatch {
                    expected: first.shape,
                    got: t.shape,
                });
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Self::from_vec([n, c, h, w], data)
    }

    /// Spatial crop `[top, top+h) × [left, left+w)` of every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.h() || left + w > self.w() {
            return Err(Error::InvalidDims(format!(
                "crop {h}x{w} at ({top},{left}) exceeds {}x{}",
                self.h(),
                self.w()
            )));
        }
        let [n, c, ..] = self.shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                let plane = self.plane(b, ch);
                for i in top..top + h {
                    let row = i * self.w();
                    data.extend_from_slice(&plane[row + left..row + left + w]);
                }
            }
        }
        Self::from_vec([n, c, h, w], data)
    }
}

/// `out[i] = op(a[i], b[i])`. Fails on shape mismatch or non-finite output.
pub fn ewise<T: Real>(op: Op, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    a.same_shape(b)?;
    let mut out = a.zeros_like();
    let per_item = a.len() / a.n();
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk_mut(out.data_mut(), per_item, |k, chunk| {
        let base = k * per_item;
        for (i, o) in chunk.iter_mut().enumerate() {
            let (x, y) = (ad[base + i], bd[base + i]);
            *o = match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
            };
        }
    });
    out.ensure_finite("ewise")
}

/// Serializable position of an [`Rng`] stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Seeded ChaCha8 stream. Equal seeds give bitwise-equal samples.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Child stream derived from this one; does not advance `self`.
    pub fn fork(&self, salt: u64) -> Self {
        let mut inner = self.inner.clone();
        inner.set_stream(self.inner.get_stream() ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 1);
        inner.set_word_pos(0);
        Self { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self { inner }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform real in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

/// I.i.d. `N(0, std²)` samples. The stream is consumed in linear-index order.
pub fn randn<T: Real>(
    rng: &mut Rng,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    std: f64,
) -> Result<Tensor4<T>> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "std must be positive, got {std}"
        )));
    }
    let len = checked_len([n, c, h, w])?;
    let data = (0..len)
        .map(|_| T::of(rng.standard_normal() * std))
        .collect();
    Tensor4::from_vec([n, c, h, w], data)
}
