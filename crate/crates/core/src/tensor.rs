//! Dense row-major tensors over `f32` or `f64`.
//!
//! Image tensors use the `[batch, channel, height, width]` layout.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar element type. Training runs in `f32`, verification in `f64`.
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
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k` and
    /// `op(b)` is `k x n`, all row-major. A transposed operand is read with
    /// swapped strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical (rows x cols); storage is (cols x rows) when transposed
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: bounds asserted above; strides describe dense row-major buffers.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Converts an `f64` literal into `T`.
#[inline]
pub fn cst<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor from raw data, rejecting length mismatches and
    /// non-finite values.
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_parts(dims, data)?;
        if !t.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        Ok(t)
    }

    /// Like [`Tensor::new`] but without the finiteness scan.
    pub fn from_parts(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} need {} values, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub(crate) fn raw(dims: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { dims: vec![1], data: vec![value] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = dims.iter().product();
        Self { dims: dims.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteInput)
        }
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Dimensions as `[b, c, h, w]`, or an error for other ranks.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.dims[..] {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::ShapeMismatch(format!("expected rank 4, got {:?}", self.dims))),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.dims[..] {
            [h, w] => Ok([h, w]),
            _ => Err(Error::ShapeMismatch(format!("expected rank 2, got {:?}", self.dims))),
        }
    }

    pub fn at2(&self, r: usize, c: usize) -> T {
        self.data[r * self.dims[1] + c]
    }

    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        let [_, cc, h, w] = [self.dims[0], self.dims[1], self.dims[2], self.dims[3]];
        self.data[((b * cc + c) * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let [m, k] = self.dims2()?;
        let [k2, n] = other.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul {:?} x {:?}",
                self.dims, other.dims
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), &self.data, false, &other.data, false, T::zero(), &mut out);
        Ok(Self::raw(vec![m, n], out))
    }

    pub fn transpose2(&self) -> Result<Self> {
        let [m, n] = self.dims2()?;
        Ok(Self::from_fn(&[n, m], |i| self.data[(i % m) * n + i / m]))
    }

    /// Slice of batch item `b` of a rank-4 tensor, as a rank-3 tensor.
    pub fn batch_item(&self, b: usize) -> Self {
        let per: usize = self.dims[1..].iter().product();
        Self::raw(self.dims[1..].to_vec(), self.data[b * per..(b + 1) * per].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::ShapeMismatch("empty stack".into()))?;
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        Ok(Self::raw(dims, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(matches!(
            Tensor::<f32>::new(&[1], vec![f32::NAN]),
            Err(Error::NonFiniteInput)
        ));
        assert!(Tensor::<f64>::new(&[2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn gemm_transposes() {
        let a = Tensor::<f64>::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::new(&[3, 2], vec![1., 0., 0., 1., 1., 1.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[4., 5., 10., 11.]);

        // a^T (3x2) * a (2x3) via the transpose flag
        let mut out = vec![0.0; 9];
        f64::gemm(3, 2, 3, 1.0, a.data(), true, a.data(), false, 0.0, &mut out);
        let at = a.transpose2().unwrap();
        let expect = at.matmul(&a).unwrap();
        assert_eq!(out, expect.data());
    }
}
