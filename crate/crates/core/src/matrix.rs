//! Dense row-major matrices, the naive reference GEMM and the in-place
//! update primitives used by merge/unmerge.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::scalar::Scalar;

/// Matrix shape as `(rows, cols)`.
pub type Shape = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatrixError {
    #[error("matrix dimensions must be at least 1x1, got {rows}x{cols}")]
    Empty { rows: usize, cols: usize },
    #[error("data length {got} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, got: usize },
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },
}

/// Dense row-major matrix backed by a single contiguous allocation.
#[derive(Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, MatrixError> {
        if rows == 0 || cols == 0 {
            return Err(MatrixError::Empty { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(MatrixError::DataLength { rows, cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Zero matrix. Panics on a zero dimension.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be at least 1x1");
        Self { rows, cols, data: vec![T::ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self, MatrixError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row.as_ref());
        }
        Self::new(r, c, data)
    }

    /// Entries drawn uniformly from `[-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| T::from_f64(rng.random_range(-scale..scale)))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Address of the backing storage; stable across the in-place ops.
    pub fn storage_addr(&self) -> usize {
        self.data.as_ptr() as usize
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * alpha).collect() }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::ZERO, |acc, &v| if v.abs() > acc { v.abs() } else { acc })
    }

    /// Copies the given rows, in order, into a dense sub-matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        assert!(!indices.is_empty(), "gather of zero rows");
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = &self.data[i * self.cols..i * self.cols + self.cols.min(8)];
            write!(f, "{row:?}")?;
        }
        if self.rows > 8 {
            write!(f, " ...")?;
        }
        write!(f, "]")
    }
}

fn check_same_shape<T: Scalar>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<(), MatrixError> {
    if a.shape() != b.shape() {
        return Err(MatrixError::ShapeMismatch { op, left: a.shape(), right: b.shape() });
    }
    Ok(())
}

/// Naive triple-loop GEMM with 64-bit accumulation. The correctness oracle
/// for every optimized multiply in the crate.
pub fn gemm_reference<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, MatrixError> {
    if a.cols != b.rows {
        return Err(MatrixError::ShapeMismatch { op: "gemm", left: a.shape(), right: b.shape() });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a.data[i * k + p].to_f64() * b.data[p * n + j].to_f64();
            }
            c.data[i * n + j] = T::from_f64(acc);
        }
    }
    Ok(c)
}

/// `target += delta`, in place.
pub fn add_inplace<T: Scalar>(target: &mut Matrix<T>, delta: &Matrix<T>) -> Result<(), MatrixError> {
    check_same_shape("add_inplace", target, delta)?;
    for (t, &d) in target.data.iter_mut().zip(&delta.data) {
        *t += d;
    }
    Ok(())
}

/// `target -= delta`, in place.
pub fn sub_inplace<T: Scalar>(target: &mut Matrix<T>, delta: &Matrix<T>) -> Result<(), MatrixError> {
    check_same_shape("sub_inplace", target, delta)?;
    for (t, &d) in target.data.iter_mut().zip(&delta.data) {
        *t -= d;
    }
    Ok(())
}

pub fn max_abs_diff<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T, MatrixError> {
    check_same_shape("max_abs_diff", a, b)?;
    Ok(a.data.iter().zip(&b.data).fold(T::ZERO, |acc, (&x, &y)| {
        let d = (x - y).abs();
        if d > acc {
            d
        } else {
            acc
        }
    }))
}

/// Tolerance used throughout: `rel * max(1, max|entry|)` over both operands.
pub fn scaled_tolerance<T: Scalar>(rel: f64, a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    let scale = a.max_abs().to_f64().max(b.max_abs().to_f64()).max(1.0);
    rel * scale
}

/// True when `max_abs_diff(a, b) <= rel * max(1, max|entry|)`.
pub fn approx_eq<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, rel: f64) -> bool {
    match max_abs_diff(a, b) {
        Ok(d) => d.to_f64() <= scaled_tolerance(rel, a, b),
        Err(_) => false,
    }
}
