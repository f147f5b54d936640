use std::fmt;

use crate::error::{KfcError, Result};

/// Dense row-major matrix of `f64`.
///
/// Element `(i, j)` lives at `data[i * cols + j]`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Checks that a `rows x cols` buffer of `f64` can be allocated.
pub(crate) fn checked_len(rows: usize, cols: usize) -> Result<usize> {
    rows.checked_mul(cols)
        .filter(|&n| n <= isize::MAX as usize / std::mem::size_of::<f64>())
        .ok_or_else(|| KfcError::Capacity(format!("{rows}x{cols} matrix exceeds addressable size")))
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(KfcError::shape(format!("matrix dimensions must be positive, got {rows}x{cols}")));
        }
        let len = checked_len(rows, cols)?;
        if data.len() != len {
            return Err(KfcError::shape(format!("{rows}x{cols} matrix needs {len} elements, got {}", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(KfcError::arg(format!("non-finite element at ({}, {})", pos / cols, pos % cols)));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix without validation. Callers guarantee shape and finiteness.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    /// Builds a matrix from nested row slices; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map(|row| row.as_ref().len()).unwrap_or(0);
        assert!(r > 0 && c > 0, "empty matrix literal");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged matrix literal");
            data.extend_from_slice(row.as_ref());
        }
        Self::from_raw(r, c, data)
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self::from_raw(values.len(), 1, values.to_vec())
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// Same data viewed with a different shape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows.checked_mul(cols) != Some(self.data.len()) {
            return Err(KfcError::shape(format!("cannot reshape {}x{} into {rows}x{cols}", self.rows, self.cols)));
        }
        Ok(Matrix::from_raw(rows, cols, self.data.clone()))
    }

    /// Matrix product with a fixed i-k-j loop order.
    ///
    /// Every output entry accumulates `a[i][k] * b[k][j]` for `k = 0, 1, ..`
    /// starting from `0.0`, so the result is bit-identical to a naive triple loop.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(KfcError::shape(format!(
                "matmul of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = vec![0.0; checked_len(self.rows, n)?];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let c_row = &mut out[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[k * n..(k + 1) * n];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(self.rows, n, out))
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(KfcError::shape(format!(
                "t_matmul of ({}x{})^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, n) = (self.cols, other.cols);
        let mut out = vec![0.0; checked_len(m, n)?];
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                let c_row = &mut out[i * n..(i + 1) * n];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(m, n, out))
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(KfcError::shape(format!(
                "matmul_t of {}x{} by ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, n) = (self.rows, other.rows);
        let mut out = vec![0.0; checked_len(m, n)?];
        for i in 0..m {
            let a_row = self.row(i);
            for j in 0..n {
                out[i * n + j] = dot(a_row, other.row(j));
            }
        }
        Ok(Matrix::from_raw(m, n, out))
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(KfcError::shape(format!(
                "{op} of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(KfcError::shape(format!(
                "add of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|v| v * alpha).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Adds `bias[j]` to every entry of column `j`.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(KfcError::shape(format!("bias of length {} for {} columns", bias.len(), self.cols)));
        }
        for i in 0..self.rows {
            for (v, &b) in self.row_mut(i).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Sum over rows, one entry per column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, &v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copies of the selected rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(idx.len(), self.cols, data)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for j in 0..self.cols.min(8) {
                write!(f, "{:>12.6} ", self.get(i, j))?;
            }
            if self.cols > 8 {
                write!(f, "...")?;
            }
            writeln!(f)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}
