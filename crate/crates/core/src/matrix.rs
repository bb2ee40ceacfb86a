//! Dense row-major matrices and the handful of product kernels the
//! fully connected networks need.
//!
//! Every kernel accumulates in a fixed order, so results are bit-identical
//! between runs on the same build regardless of optimization level.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::distr::uniform::SampleUniform;

use crate::error::{Error, Result};

/// Floating-point element type for all numeric kernels. Implemented for
/// `f32` (storage precision) and `f64` (test/gradient-check precision).
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + SampleUniform
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dot product with eight independent accumulator lanes. Lane `j` only ever
/// sees indices congruent to `j` mod 8, so the summation order is fixed and
/// the loop still vectorizes.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for k in 0..chunks {
        let i = k * 8;
        for j in 0..8 {
            lanes[j] = a[i + j].mul_add(b[i + j], lanes[j]);
        }
    }
    let mut s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for i in chunks * 8..a.len() {
        s = a[i].mul_add(b[i], s);
    }
    s
}

/// `out += c * x`, elementwise.
pub fn axpy<T: Scalar>(out: &mut [T], c: T, x: &[T]) {
    assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = c.mul_add(v, *o);
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::from_vec",
                format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("Matrix::from_rows", "ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other^T`: `(m x k) * (n x k)^T -> (m x n)`. Both operands are
    /// walked row-wise, which keeps every inner product on contiguous memory.
    pub fn mul_bt(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.cols {
            return Err(Error::dim(
                "Matrix::mul_bt",
                format!("{}x{} * ({}x{})^T", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            let o = out.row_mut(r);
            for (n, cell) in o.iter_mut().enumerate() {
                *cell = dot(a, other.row(n));
            }
        }
        Ok(out)
    }

    /// `self * other`: `(m x k) * (k x n) -> (m x n)`, accumulated as a sum
    /// of scaled rows of `other` so the inner loop stays contiguous.
    pub fn mul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "Matrix::mul",
                format!("{}x{} * {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let o = out.row_mut(r);
            for (k, &coeff) in a.iter().enumerate() {
                axpy(o, coeff, other.row(k));
            }
        }
        Ok(out)
    }

    /// `self^T * other`: `(b x m)^T * (b x n) -> (m x n)`. Used for weight
    /// gradients, where `b` is the batch dimension.
    pub fn tmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "Matrix::tmul",
                format!("({}x{})^T * {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for b in 0..self.rows {
            let a = self.row(b);
            let x = other.row(b);
            for (m, &coeff) in a.iter().enumerate() {
                axpy(out.row_mut(m), coeff, x);
            }
        }
        Ok(out)
    }

    /// Horizontal concatenation `[self | other]`. `other` may have zero
    /// columns, in which case the result equals `self`.
    pub fn concat_cols(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if other.cols == 0 {
            return Ok(self.clone());
        }
        if self.rows != other.rows {
            return Err(Error::dim(
                "Matrix::concat_cols",
                format!("{} rows vs {} rows", self.rows, other.rows),
            ));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Copy of the first `n` columns.
    pub fn left_cols(&self, n: usize) -> Matrix<T> {
        assert!(n <= self.cols);
        let mut out = Matrix::zeros(self.rows, n);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[..n]);
        }
        out
    }

    /// Lossy conversion between scalar types, via f64.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
