//! Dense and sparse matrices plus the handful of kernels the model needs.
//!
//! Dense matrices are row-major `f64`. Sparse matrices are stored in
//! compressed-column form, so iterating entries always yields them in
//! column-major sorted order and `spmm` output is deterministic.

use crate::error::{Error, Result};

/// Default floor used by [`l2_normalize_columns`].
pub const L2_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies column `c` out (columns are strided in row-major storage).
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Gathers the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.cols) {
            return Err(Error::Shape(format!(
                "column {bad} out of range for {} columns",
                self.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, columns.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = &mut out.data[r * columns.len()..(r + 1) * columns.len()];
            for (d, &c) in dst.iter_mut().zip(columns) {
                *d = src[c];
            }
        }
        Ok(out)
    }

    /// Stacks `top` above `bottom`.
    pub fn concat_rows(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
        if top.cols != bottom.cols {
            return Err(Error::Shape(format!(
                "cannot stack {}x{} on {}x{}",
                top.rows, top.cols, bottom.rows, bottom.cols
            )));
        }
        let mut data = Vec::with_capacity(top.len() + bottom.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(Matrix {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sq.iter_mut().zip(self.row(r)) {
                *s += v * v;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }
}

/// General matrix product `c = alpha * op(a) * op(b) + beta * c`, where
/// `op` optionally transposes. Backed by `matrixmultiply::dgemm`, which
/// handles transposition through strides without copying.
pub fn gemm(
    alpha: f64,
    a: &Matrix,
    transpose_a: bool,
    b: &Matrix,
    transpose_b: bool,
    beta: f64,
    c: &mut Matrix,
) -> Result<()> {
    let (m, k, rsa, csa) = if transpose_a {
        (a.cols, a.rows, 1, a.cols)
    } else {
        (a.rows, a.cols, a.cols, 1)
    };
    let (kb, n, rsb, csb) = if transpose_b {
        (b.cols, b.rows, 1, b.cols)
    } else {
        (b.rows, b.cols, b.cols, 1)
    };
    if k != kb || c.rows != m || c.cols != n {
        return Err(Error::Shape(format!(
            "gemm: ({m}x{k}) * ({kb}x{n}) into {}x{}",
            c.rows, c.cols
        )));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        for v in &mut c.data {
            *v *= beta;
        }
        return Ok(());
    }
    // SAFETY: the pointers come from live Vec buffers whose lengths match
    // the dimensions and strides checked above; `c` does not alias `a`/`b`
    // because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a, false, b, false, 0.0, &mut c)?;
    Ok(c)
}

#[inline]
pub fn elu_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU. At exactly zero the right branch (slope 1) is used.
#[inline]
pub fn elu_grad_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn elu(x: &Matrix) -> Matrix {
    x.map(elu_scalar)
}

/// Divides each column by `max(norm, epsilon)`. Zero columns stay zero.
pub fn l2_normalize_columns(x: &Matrix, epsilon: f64) -> Matrix {
    let norms = x.column_norms();
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
        for (v, n) in row.iter_mut().zip(&norms) {
            *v /= n.max(epsilon);
        }
    }
    out
}

/// Sparse matrix in compressed-column layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from coordinate triples in any order. Duplicate coordinates,
    /// out-of-range indices, and non-finite weights are rejected.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, w) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Shape(format!(
                    "sparse entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Shape(format!(
                    "sparse entry ({r}, {c}) has non-finite weight"
                )));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (c, r));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1)
        {
            return Err(Error::Shape(format!(
                "duplicate sparse entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut col_ptr = vec![0usize; cols + 1];
        for &(_, c, _) in &entries {
            col_ptr[c + 1] += 1;
        }
        for c in 0..cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(Self {
            rows,
            cols,
            col_ptr,
            row_idx: entries.iter().map(|e| e.0).collect(),
            values: entries.iter().map(|e| e.2).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of column `c` as `(row, weight)` pairs, rows ascending.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// All entries as `(row, col, weight)` in column-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.cols).flat_map(move |c| self.column(c).map(move |(r, w)| (r, c, w)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.column(c)
            .find(|&(row, _)| row == r)
            .map_or(0.0, |(_, w)| w)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (r, c, w) in self.entries() {
            m.set(r, c, w);
        }
        m
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.cols).map(|c| self.column(c).map(|(_, w)| w).sum()).collect()
    }
}

/// Dense (H x M) times sparse (M x N). Output column `j` is the weighted
/// sum of the dense columns named by the sparse column `j`.
pub fn spmm(dense: &Matrix, sparse: &SparseMatrix) -> Result<Matrix> {
    if dense.cols != sparse.rows {
        return Err(Error::Shape(format!(
            "spmm: dense {}x{} times sparse {}x{}",
            dense.rows, dense.cols, sparse.rows, sparse.cols
        )));
    }
    let n = sparse.cols;
    let mut out = Matrix::zeros(dense.rows, n);
    for h in 0..dense.rows {
        let src = dense.row(h);
        let dst = &mut out.data[h * n..(h + 1) * n];
        for (j, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in sparse.col_ptr[j]..sparse.col_ptr[j + 1] {
                acc += src[sparse.row_idx[p]] * sparse.values[p];
            }
            *d = acc;
        }
    }
    Ok(out)
}

/// Gradient of `spmm` with respect to its dense operand: `upstream * S^T`.
pub fn spmm_transpose(upstream: &Matrix, sparse: &SparseMatrix) -> Result<Matrix> {
    if upstream.cols != sparse.cols {
        return Err(Error::Shape(format!(
            "spmm_transpose: upstream {}x{} against sparse {}x{}",
            upstream.rows, upstream.cols, sparse.rows, sparse.cols
        )));
    }
    let m = sparse.rows;
    let mut out = Matrix::zeros(upstream.rows, m);
    for h in 0..upstream.rows {
        let up = upstream.row(h);
        let dst = &mut out.data[h * m..(h + 1) * m];
        for (j, &g) in up.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for p in sparse.col_ptr[j]..sparse.col_ptr[j + 1] {
                dst[sparse.row_idx[p]] += g * sparse.values[p];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elu_values() {
        assert_eq!(elu_scalar(1.0), 1.0);
        assert_eq!(elu_scalar(0.0), 0.0);
        assert!((elu_scalar(-1.0) - (-0.63212)).abs() < 1e-5);
        assert_eq!(elu_grad_scalar(0.0), 1.0);
    }

    #[test]
    fn normalize_examples() {
        let x = Matrix::from_rows(&[&[3.0, 0.0, -2.0], &[4.0, 0.0, 0.0]]);
        let y = l2_normalize_columns(&x, L2_EPSILON);
        assert!((y.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((y.get(1, 0) - 0.8).abs() < 1e-15);
        assert_eq!(y.column(1), vec![0.0, 0.0]);
        assert_eq!(y.column(2), vec![-1.0, 0.0]);
    }

    #[test]
    fn spmm_examples() {
        let s = SparseMatrix::from_triplets(2, 1, vec![(0, 0, 1.0)]).unwrap();
        let out = spmm(&Matrix::from_rows(&[&[1.0, 2.0]]), &s).unwrap();
        assert_eq!(out, Matrix::from_rows(&[&[1.0]]));

        let s = SparseMatrix::from_triplets(2, 3, vec![(1, 0, 0.5), (0, 2, 2.0), (1, 2, 3.0)])
            .unwrap();
        let eye = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(spmm(&eye, &s).unwrap(), s.to_dense());

        let s = SparseMatrix::from_triplets(2, 1, vec![(0, 0, 0.4), (1, 0, 0.6)]).unwrap();
        let out = spmm(&Matrix::from_rows(&[&[1.0, 1.0]]), &s).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spmm_dimension_mismatch() {
        let s = SparseMatrix::from_triplets(3, 1, vec![]).unwrap();
        assert!(spmm(&Matrix::zeros(1, 2), &s).is_err());
    }

    #[test]
    fn sparse_rejects_duplicates() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0)]).is_err());
    }

    #[test]
    fn sparse_entries_are_column_major() {
        let s = SparseMatrix::from_triplets(3, 3, vec![(2, 0, 1.0), (0, 2, 1.0), (0, 0, 1.0)])
            .unwrap();
        let order: Vec<_> = s.entries().map(|(r, c, _)| (r, c)).collect();
        assert_eq!(order, vec![(0, 0), (2, 0), (0, 2)]);
    }

    #[test]
    fn gemm_transposes() {
        let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut c = Matrix::zeros(3, 2);
        gemm(1.0, &a, true, &b, false, 0.0, &mut c).unwrap();
        assert_eq!(c, a.transpose());
        let mut c = Matrix::zeros(2, 2);
        gemm(1.0, &a, false, &a, true, 0.0, &mut c).unwrap();
        assert_eq!(c, Matrix::from_rows(&[&[14.0, 32.0], &[32.0, 77.0]]));
    }

    fn dense_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    fn sparse_strategy() -> impl Strategy<Value = (Matrix, SparseMatrix)> {
        (1usize..=50, 1usize..=50, 1usize..=50).prop_flat_map(|(h, m, n)| {
            let dense = prop::collection::vec(-10i32..=10, h * m);
            let mask = prop::collection::vec((any::<bool>(), -10i32..=10), m * n);
            (dense, mask).prop_map(move |(d, mask)| {
                let dense =
                    Matrix::from_vec(h, m, d.into_iter().map(|v| v as f64 / 4.0).collect()).unwrap();
                let entries = mask
                    .into_iter()
                    .enumerate()
                    .filter(|(_, (keep, _))| *keep)
                    .map(|(i, (_, w))| (i / n, i % n, w as f64 / 8.0))
                    .collect();
                (dense, SparseMatrix::from_triplets(m, n, entries).unwrap())
            })
        })
    }

    proptest! {
        // Dyadic inputs make every product and partial sum exact.
        #[test]
        fn spmm_matches_dense_oracle((dense, sparse) in sparse_strategy()) {
            let got = spmm(&dense, &sparse).unwrap();
            prop_assert_eq!(got, dense_oracle(&dense, &sparse.to_dense()));
        }

        #[test]
        fn normalize_is_idempotent(data in prop::collection::vec(-5.0f64..5.0, 1..64), rows in 1usize..8) {
            let cols = data.len() / rows;
            prop_assume!(cols > 0);
            let x = Matrix::from_vec(rows, cols, data[..rows * cols].to_vec()).unwrap();
            let once = l2_normalize_columns(&x, L2_EPSILON);
            let twice = l2_normalize_columns(&once, L2_EPSILON);
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
