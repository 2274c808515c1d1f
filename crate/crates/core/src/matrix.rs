//! Dense row-major matrices for hidden states and LM-head weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    data: Vec<T>,
    rows: usize,
    cols: usize,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { data, rows, cols })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: vec![T::zero(); rows * cols],
            rows,
            cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Hidden states feeding the LM head: `B x D`, one row per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates<T> {
    mat: Matrix<T>,
}

impl<T: Scalar> HiddenStates<T> {
    pub fn new(mat: Matrix<T>) -> Result<Self> {
        if mat.rows() == 0 || mat.cols() == 0 {
            return Err(Error::ShapeMismatch(
                "hidden states need at least one row and one column".into(),
            ));
        }
        Ok(HiddenStates { mat })
    }

    pub fn from_vec(batch: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Matrix::new(batch, dim, data)?)
    }

    /// Batch size `B`.
    pub fn batch(&self) -> usize {
        self.mat.rows()
    }

    /// Model dimension `D`.
    pub fn dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.mat
    }

    pub fn row(&self, b: usize) -> &[T] {
        self.mat.row(b)
    }
}

/// Storage-width tag for weight elements. The tag drives byte accounting in
/// the traffic ledger; values are held in the working scalar type either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementPrecision {
    /// Elements accounted at the working scalar's width.
    Full,
    /// 16-bit-like storage (BF16/FP16 class), accounted at 2 bytes.
    Reduced16,
}

/// LM-head weights: `V x D`, one row per vocabulary entry, so a vocabulary
/// tile is a contiguous row range.
#[derive(Debug, Clone, PartialEq)]
pub struct LmHeadWeights<T> {
    mat: Matrix<T>,
    precision: ElementPrecision,
}

impl<T: Scalar> LmHeadWeights<T> {
    pub fn new(mat: Matrix<T>, precision: ElementPrecision) -> Result<Self> {
        if mat.rows() == 0 || mat.cols() == 0 {
            return Err(Error::ShapeMismatch(
                "weights need at least one row and one column".into(),
            ));
        }
        Ok(LmHeadWeights { mat, precision })
    }

    pub fn from_vec(vocab: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Matrix::new(vocab, dim, data)?, ElementPrecision::Full)
    }

    pub fn with_precision(mut self, precision: ElementPrecision) -> Self {
        self.precision = precision;
        self
    }

    /// Vocabulary size `V`.
    pub fn vocab(&self) -> usize {
        self.mat.rows()
    }

    /// Model dimension `D`.
    pub fn dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn precision(&self) -> ElementPrecision {
        self.precision
    }

    /// Accounting width of one stored element.
    pub fn bytes_per_element(&self) -> u64 {
        match self.precision {
            ElementPrecision::Full => std::mem::size_of::<T>() as u64,
            ElementPrecision::Reduced16 => 2,
        }
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.mat
    }

    pub fn row(&self, v: usize) -> &[T] {
        self.mat.row(v)
    }
}
