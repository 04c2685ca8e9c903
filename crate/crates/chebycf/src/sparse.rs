//! Minimal sparse primitives: CSR matrices and dense signal blocks.
//!
//! Two matrix flavours are enough for this crate. [`BinaryCsr`] stores the
//! 0/1 interaction pattern (no value array), [`CsrMatrix`] stores the real
//! normalized matrix. Both are row-major; transposed products are served by
//! keeping an explicitly transposed companion rather than by a column-major
//! kernel, so every matvec walks rows in order and stays deterministic under
//! any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Sparse 0/1 matrix in CSR layout. Stored entries are implicitly 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCsr {
    num_rows: usize,
    num_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl BinaryCsr {
    /// Build from per-row column lists. Columns within a row must be unique;
    /// they are sorted here so the layout is canonical.
    pub fn from_rows(num_cols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        let num_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(num_rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in rows.iter_mut() {
            row.sort_unstable();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        debug_assert!(col_idx.iter().all(|&c| c < num_cols));
        BinaryCsr {
            num_rows,
            num_cols,
            row_ptr,
            col_idx,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices of the stored entries in `row`, ascending.
    pub fn row(&self, row: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[row]..self.row_ptr[row + 1]]
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    /// Iterate all stored `(row, col)` pairs in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }
}

/// Sparse real matrix in CSR layout.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    num_rows: usize,
    num_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_parts(
        num_rows: usize,
        num_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_ptr.len(), num_rows + 1);
        debug_assert_eq!(col_idx.len(), values.len());
        CsrMatrix {
            num_rows,
            num_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Transpose by a counting pass; output rows keep ascending column order.
    pub fn transposed(&self) -> CsrMatrix {
        let mut row_ptr = vec![0usize; self.num_cols + 1];
        for &c in &self.col_idx {
            row_ptr[c + 1] += 1;
        }
        for i in 0..self.num_cols {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0f64; self.nnz()];
        let mut cursor = row_ptr.clone();
        for r in 0..self.num_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let at = cursor[c];
                col_idx[at] = r;
                values[at] = self.values[k];
                cursor[c] += 1;
            }
        }
        CsrMatrix {
            num_rows: self.num_cols,
            num_cols: self.num_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, row: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[row]..self.row_ptr[row + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// `y = A x`. Cost O(nnz).
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.num_cols {
            return Err(Error::DimensionMismatch {
                expected: self.num_cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.num_rows];
        for r in 0..self.num_rows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// `Y = A X` on a multi-column block. Each output row is owned by one
    /// task, so results are bit-identical for any worker count and match the
    /// single-vector path column by column.
    pub fn matvec_block(&self, x: &SignalBlock) -> Result<SignalBlock> {
        if x.num_rows() != self.num_cols {
            return Err(Error::DimensionMismatch {
                expected: self.num_cols,
                got: x.num_rows(),
            });
        }
        let b = x.num_cols();
        let mut y = SignalBlock::zeros(self.num_rows, b);
        y.data_mut()
            .par_chunks_mut(b)
            .enumerate()
            .for_each(|(r, out)| {
                let (cols, vals) = self.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    let xin = x.row(c);
                    for (o, &xi) in out.iter_mut().zip(xin) {
                        *o += v * xi;
                    }
                }
            });
        Ok(y)
    }
}

/// Dense row-major matrix holding one graph signal per column.
///
/// Used to push batches of user signals through the filters in one pass over
/// the sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    num_rows: usize,
    num_cols: usize,
    data: Vec<f64>,
}

impl SignalBlock {
    pub fn zeros(num_rows: usize, num_cols: usize) -> Self {
        SignalBlock {
            num_rows,
            num_cols,
            data: vec![0.0; num_rows * num_cols],
        }
    }

    /// Stack column vectors; all must share a length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let num_cols = columns.len();
        let num_rows = columns.first().map_or(0, Vec::len);
        let mut block = SignalBlock::zeros(num_rows, num_cols);
        for (c, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), num_rows, "ragged column lengths");
            for (r, &v) in col.iter().enumerate() {
                block.data[r * num_cols + c] = v;
            }
        }
        block
    }

    pub fn from_column(column: &[f64]) -> Self {
        SignalBlock {
            num_rows: column.len(),
            num_cols: 1,
            data: column.to_vec(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.num_cols..(r + 1) * self.num_cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.num_cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.num_cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.num_rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self = alpha * self + beta * other`, elementwise.
    pub fn scale_add(&mut self, alpha: f64, beta: f64, other: &SignalBlock) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (s, &o) in self.data.iter_mut().zip(&other.data) {
            *s = alpha * *s + beta * o;
        }
    }
}
