use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                op: "DenseMatrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    op: "DenseMatrix::from_rows",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Narrows a matrix of `f64` accumulators into storage width.
    pub fn from_f64(m: &DenseMatrix<f64>) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|&v| T::from_f64(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> DenseMatrix<f64> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.to_f64()).collect(),
        }
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
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

    pub fn view(&self) -> MatrixView<'_, T> {
        MatrixView {
            rows: self.rows,
            cols: self.cols,
            stride: self.cols,
            data: &self.data,
        }
    }

    /// View of a rectangular sub-block.
    pub fn block(&self, rows: Range<usize>, cols: Range<usize>) -> MatrixView<'_, T> {
        self.view().block(rows, cols)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, libm::fabs(v.to_f64())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    /// Copies columns `cols` into a contiguous `len(cols) x rows` buffer, widened to `f64`.
    /// Column `j` of the range lands at `out[j * rows..(j + 1) * rows]`.
    pub fn gather_columns_into(&self, cols: Range<usize>, out: &mut Vec<f64>) {
        out.clear();
        for j in cols {
            out.extend((0..self.rows).map(|d| self.data[d * self.cols + j].to_f64()));
        }
    }

    /// Copies one column into `out[..rows]`.
    #[inline]
    pub fn load_column(&self, j: usize, out: &mut [f64]) {
        for (d, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.data[d * self.cols + j].to_f64();
        }
    }
}

/// Borrowed rectangular window into a row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct MatrixView<'a, T> {
    rows: usize,
    cols: usize,
    stride: usize,
    data: &'a [T],
}

impl<'a, T: Real> MatrixView<'a, T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.stride + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [T] {
        let start = i * self.stride;
        &self.data[start..start + self.cols]
    }

    pub fn block(&self, rows: Range<usize>, cols: Range<usize>) -> MatrixView<'a, T> {
        assert!(rows.end <= self.rows && cols.end <= self.cols, "block out of bounds");
        let start = rows.start * self.stride + cols.start;
        let nrows = rows.len();
        let ncols = cols.len();
        let end = if nrows == 0 {
            start
        } else {
            start + (nrows - 1) * self.stride + ncols
        };
        MatrixView {
            rows: nrows,
            cols: ncols,
            stride: self.stride,
            data: &self.data[start..end],
        }
    }
}

/// Exact dense product of two views, accumulated in `f64`.
///
/// Uses the i-k-j loop order so the inner loop streams contiguous rows of `b`.
pub fn matmul_block<A: Real, B: Real>(a: MatrixView<'_, A>, b: MatrixView<'_, B>) -> Result<DenseMatrix<f64>> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_block",
            left: (a.rows, a.cols),
            right: (b.rows, b.cols),
        });
    }
    let mut out = DenseMatrix::<f64>::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let o_row = out.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            let aik = aik.to_f64();
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in o_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj.to_f64();
            }
        }
    }
    Ok(out)
}

/// `f64` dot product of two equally long slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
