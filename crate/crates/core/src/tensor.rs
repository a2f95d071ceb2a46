//! Dense row-major tensors and the numeric kernels the layers build on.
//!
//! Feature maps are laid out as `(batch, height, width, channels)`. All
//! reductions run in a fixed order so identical inputs give bit-identical
//! outputs. Training uses `f32`; the same code instantiated at `f64` serves
//! as the double-precision mode for finite-difference gradient checks.

use std::fmt::Debug;

use num_traits::{Float, NumAssign};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Element type of a [`Tensor`].
pub trait Scalar: Float + NumAssign + Default + Debug + Send + Sync + 'static {
    fn cast_from(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn cast_from(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cast_from(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Initializer for [`Tensor::new`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Normal draws with standard deviation `sqrt(2 / fan_in)`, where
    /// `fan_in` is the product of every extent but the last.
    HeNormal {
        seed: u64,
    },
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("shape must have at least one extent".into()));
    }
    if let Some(pos) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Shape(format!("extent {pos} of {shape:?} is zero")));
    }
    Ok(shape.iter().product())
}

/// Fan-in used by He initialization.
pub fn fan_in(shape: &[usize]) -> usize {
    if shape.len() == 1 {
        shape[0]
    } else {
        shape[..shape.len() - 1].iter().product()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], init: Init) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Ones => vec![T::one(); len],
            Init::Constant(c) => vec![T::cast_from(c); len],
            Init::HeNormal { seed } => {
                let std = (2.0 / fan_in(shape) as f64).sqrt();
                let normal = Normal::new(0.0, std).map_err(|e| Error::Numeric(format!("he_normal: {e}")))?;
                let mut rng = seed::rng(seed);
                (0..len).map(|_| T::cast_from(normal.sample(&mut rng))).collect()
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, Init::Zeros)
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::cast_from(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
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

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::cast_from(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {:?} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot accumulate {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sum of all values, left to right.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// Extract batch items `[start, end)` along the leading axis.
    pub fn batch_slice(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        if start >= end || end > self.shape[0] {
            return Err(Error::Shape(format!(
                "batch range {start}..{end} out of {:?}",
                self.shape
            )));
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * stride..end * stride].to_vec(),
        })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }
}

// ---------------------------------------------------------------------------
// Spatial geometry
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding that keeps the extent unchanged; stride must be 1.
    SamePreserving,
    /// Zero padding giving `ceil(input / stride)`; extra padding goes after.
    SameCeil,
    /// No padding: `floor((input - kernel) / stride) + 1`.
    ValidFloor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape2DSpec {
    pub input: (usize, usize),
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
}

/// Output extent and leading padding along one axis.
pub fn axis_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if input == 0 || kernel == 0 || stride == 0 {
        return Err(Error::Shape(format!(
            "invalid geometry: input {input}, kernel {kernel}, stride {stride}"
        )));
    }
    match padding {
        Padding::SamePreserving => {
            if stride != 1 {
                return Err(Error::Shape(format!(
                    "same_preserving padding requires stride 1, got {stride}"
                )));
            }
            Ok((input, (kernel - 1) / 2))
        }
        Padding::SameCeil => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::ValidFloor => {
            if input < kernel {
                return Err(Error::Shape(format!(
                    "valid_floor: input extent {input} smaller than kernel {kernel}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

/// Output `(height, width)` of a convolution or pooling window.
pub fn infer_out_extent(spec: &Shape2DSpec) -> Result<(usize, usize)> {
    let (oh, _) = axis_geometry(spec.input.0, spec.kernel.0, spec.stride, spec.padding)?;
    let (ow, _) = axis_geometry(spec.input.1, spec.kernel.1, spec.stride, spec.padding)?;
    Ok((oh, ow))
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

const K_BLOCK: usize = 256;

/// `c = a (m×k) · b (k×n)`, row-major, overwriting `c`.
///
/// Each output element accumulates its products in ascending `k` order, so
/// results do not depend on blocking.
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(T::zero());
    if n == 0 {
        return;
    }
    let mut k0 = 0;
    while k0 < k {
        let k1 = (k0 + K_BLOCK).min(k);
        let mut rows = c.chunks_exact_mut(n).enumerate();
        while let Some((i0, c0)) = rows.next() {
            match (rows.next(), rows.next(), rows.next()) {
                (Some((_, c1)), Some((_, c2)), Some((_, c3))) => {
                    let a0 = &a[i0 * k..(i0 + 1) * k];
                    let a1 = &a[(i0 + 1) * k..(i0 + 2) * k];
                    let a2 = &a[(i0 + 2) * k..(i0 + 3) * k];
                    let a3 = &a[(i0 + 3) * k..(i0 + 4) * k];
                    for kk in k0..k1 {
                        let br = &b[kk * n..(kk + 1) * n];
                        let (x0, x1, x2, x3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
                        for j in 0..n {
                            let bv = br[j];
                            c0[j] += x0 * bv;
                            c1[j] += x1 * bv;
                            c2[j] += x2 * bv;
                            c3[j] += x3 * bv;
                        }
                    }
                }
                (r1, r2, r3) => {
                    let tail = [Some((i0, c0)), r1, r2, r3];
                    for (i, ci) in tail.into_iter().flatten() {
                        let ai = &a[i * k..(i + 1) * k];
                        for kk in k0..k1 {
                            let br = &b[kk * n..(kk + 1) * n];
                            let x = ai[kk];
                            for j in 0..n {
                                ci[j] += x * br[j];
                            }
                        }
                    }
                    break;
                }
            }
        }
        k0 = k1;
    }
}

/// Transpose a row-major `rows × cols` matrix.
pub(crate) fn transpose<T: Scalar>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

/// Standard matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, &a.data, &b.data, &mut out);
    let t = Tensor::from_vec(&[m, n], out)?;
    t.ensure_finite("matmul")?;
    Ok(t)
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    MaxWithScalar,
}

/// Right-hand operand of [`elementwise`].
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, T: Scalar> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

#[inline]
fn apply<T: Scalar>(op: ElementwiseOp, x: T, y: T) -> T {
    match op {
        ElementwiseOp::Add => x + y,
        ElementwiseOp::Sub => x - y,
        ElementwiseOp::Mul => x * y,
        ElementwiseOp::MaxWithScalar => {
            if x > y {
                x
            } else {
                y
            }
        }
    }
}

/// Pointwise `a op b`. `b` may have the same shape as `a`, be a scalar, or be
/// a rank-1 tensor matching the trailing (channel) extent of `a`.
pub fn elementwise<T: Scalar>(op: ElementwiseOp, a: &Tensor<T>, b: Operand<'_, T>) -> Result<Tensor<T>> {
    let data: Vec<T> = match b {
        Operand::Scalar(s) => a.data.iter().map(|&x| apply(op, x, s)).collect(),
        Operand::Tensor(_) if op == ElementwiseOp::MaxWithScalar => {
            return Err(Error::Shape("max_with_scalar takes a scalar operand".into()))
        }
        Operand::Tensor(bt) if bt.shape == a.shape => {
            a.data.iter().zip(&bt.data).map(|(&x, &y)| apply(op, x, y)).collect()
        }
        Operand::Tensor(bt) if bt.rank() == 1 && a.shape.last() == Some(&bt.shape[0]) => {
            let c = bt.shape[0];
            a.data
                .iter()
                .enumerate()
                .map(|(i, &x)| apply(op, x, bt.data[i % c]))
                .collect()
        }
        Operand::Tensor(bt) => {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} onto {:?}",
                bt.shape, a.shape
            )))
        }
    };
    let t = Tensor {
        shape: a.shape.clone(),
        data,
    };
    t.ensure_finite("elementwise")?;
    Ok(t)
}
