//! Small dense and row-sparse matrix kernels.
//!
//! Problem sizes in this crate stay in the hundreds of variables, so dense
//! factorizations are adequate; constraint matrices with many rows are kept
//! row-sparse.

use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| crate::scalar::dot(self.row(i), x))
            .collect()
    }

    /// `selfᵀ x`
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> T {
        crate::scalar::norm_inf(&self.data)
    }

    /// Largest `|A − Aᵀ|` entry.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces the matrix with `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in 0..i {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// Numerical rank via Gaussian elimination with full pivoting.
    pub fn rank(&self) -> usize {
        let mut a = self.clone();
        let (m, n) = (a.rows, a.cols);
        let tol = T::lit(1e3) * T::EPS * a.max_abs().max(T::one()) * T::from_usize_lossy(m.max(n));
        let mut rank = 0;
        let mut row_used = vec![false; m];
        for col in 0..n {
            let mut best = None;
            let mut best_val = tol;
            for r in 0..m {
                if !row_used[r] && a[(r, col)].abs() > best_val {
                    best_val = a[(r, col)].abs();
                    best = Some(r);
                }
            }
            let Some(p) = best else { continue };
            row_used[p] = true;
            rank += 1;
            for r in 0..m {
                if r != p && a[(r, col)] != T::zero() {
                    let factor = a[(r, col)] / a[(p, col)];
                    for c in col..n {
                        let v = a[(p, c)];
                        a[(r, c)] -= factor * v;
                    }
                }
            }
        }
        rank
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: DenseMatrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Returns `None` when a pivot is not strictly positive.
    pub fn factor(a: &DenseMatrix<T>) -> Option<Self> {
        let n = a.rows;
        assert_eq!(n, a.cols);
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(Self { l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let s: T = crate::scalar::dot(&row[..i], &y[..i]);
            y[i] = (y[i] - s) / row[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn min_pivot(&self) -> T {
        (0..self.l.rows)
            .map(|i| self.l[(i, i)])
            .fold(T::infinity(), T::min)
    }
}

/// LU factorization with partial pivoting for general square systems.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: DenseMatrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Option<Self> {
        let n = a.rows;
        assert_eq!(n, a.cols);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(T::min_positive_value());
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for r in k + 1..n {
                if lu[(r, k)].abs() > best {
                    best = lu[(r, k)].abs();
                    p = r;
                }
            }
            if best <= T::EPS * scale * T::from_usize_lossy(n) {
                return None;
            }
            if p != k {
                perm.swap(p, k);
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(p, c)];
                    lu[(p, c)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for r in k + 1..n {
                let f = lu[(r, k)] / pivot;
                lu[(r, k)] = f;
                if f != T::zero() {
                    for c in k + 1..n {
                        let v = lu[(k, c)];
                        lu[(r, c)] -= f * v;
                    }
                }
            }
        }
        Some(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows;
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * y[k];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.lu[(i, k)] * y[k];
            }
            y[i] = s / self.lu[(i, i)];
        }
        y
    }
}

/// Matrix stored as a list of sparse rows `(column, value)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SparseRows<T> {
    ncols: usize,
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> SparseRows<T> {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn from_dense(m: &DenseMatrix<T>) -> Self {
        let mut s = Self::new(m.ncols());
        for i in 0..m.nrows() {
            s.push_row(
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != T::zero())
                    .map(|(j, &v)| (j, v))
                    .collect(),
            );
        }
        s
    }

    /// Appends a row; duplicate columns are summed.
    pub fn push_row(&mut self, mut entries: Vec<(usize, T)>) {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, T)> = Vec::with_capacity(entries.len());
        for (j, v) in entries {
            assert!(j < self.ncols, "column {j} out of range {}", self.ncols);
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|e| e.1 != T::zero());
        self.rows.push(merged);
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, T)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, T)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn row_dot(&self, i: usize, x: &[T]) -> T {
        self.rows[i].iter().map(|&(j, v)| v * x[j]).sum()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.rows.len()).map(|i| self.row_dot(i, x)).collect()
    }

    pub fn tr_mul_vec(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ncols];
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi == T::zero() {
                continue;
            }
            for &(j, v) in row {
                out[j] += v * yi;
            }
        }
        out
    }

    pub fn scale_entries(&mut self, row_scale: &[T], col_scale: &[T]) {
        for (row, &r) in self.rows.iter_mut().zip(row_scale) {
            for (j, v) in row.iter_mut() {
                *v *= r * col_scale[*j];
            }
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }
}
