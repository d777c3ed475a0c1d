//! Small dense and banded linear algebra.
//!
//! Only what the filters, kriging and flow solver need: a row-major dense
//! matrix, a Cholesky factorization with optional diagonal regularization,
//! and a banded Cholesky for the 5-point flow stencil.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            self[(i, i)] += v;
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Replaces the matrix with `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// `self · other`
    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matrix product shape");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn mul_transpose(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matrix product shape");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matrix-vector shape");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Sub-matrix with the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
    /// Diagonal shift that was added before factorizing (0 if none).
    jitter: f64,
}

/// Relative pivot size below which a symmetric matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-12;

impl Cholesky {
    /// Factorizes a symmetric positive definite matrix.
    ///
    /// A pivot smaller than `1e-12 · max(diag)` counts as a failure, so
    /// numerically rank-deficient sample covariances are reported instead of
    /// producing a garbage factor.
    pub fn new(a: &Matrix, what: &'static str) -> Result<Self> {
        Self::with_shift(a, 0.0, what)
    }

    fn with_shift(a: &Matrix, shift: f64, what: &'static str) -> Result<Self> {
        let n = a.rows();
        check_len("cholesky (square)", n, a.cols())?;
        let max_diag = (0..n).map(|i| a[(i, i)] + shift).fold(0.0, f64::max);
        let tol = PIVOT_TOL * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = l.row(j)[..j].to_vec();
            let d = a[(j, j)] + shift - dot(&lj, &lj);
            if !(d > tol) || !d.is_finite() {
                return Err(Error::Factorization {
                    what,
                    pivot: j,
                    value: d,
                });
            }
            let djj = libm::sqrt(d);
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &lj);
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l, jitter: shift })
    }

    /// Factorizes `a`; on failure retries once with `rel_jitter · trace / n`
    /// added to the diagonal.
    pub fn with_jitter_retry(a: &Matrix, rel_jitter: f64, what: &'static str) -> Result<Self> {
        match Self::new(a, what) {
            Ok(c) => Ok(c),
            Err(_) => {
                let n = a.rows().max(1);
                let shift = rel_jitter * a.trace().max(0.0) / n as f64;
                if !(shift > 0.0) {
                    return Err(Error::Factorization {
                        what,
                        pivot: 0,
                        value: a.trace(),
                    });
                }
                Self::with_shift(a, shift, what)
            }
        }
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Squared ratio of the largest to smallest diagonal entry of `L`, a cheap
    /// lower estimate of the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = self.l[(i, i)];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (hi / lo) * (hi / lo)
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let row = &self.l.row(i)[..i];
            b[i] = (b[i] - dot(row, &b[..i])) / self.l[(i, i)];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            y[i] /= self.l[(i, i)];
            let xi = y[i];
            let row = &self.l.row(i)[..i];
            for (yj, lij) in y[..i].iter_mut().zip(row) {
                *yj -= lij * xi;
            }
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.rows(), self.dim());
        let bt = b.transpose();
        let mut xt = Matrix::zeros(bt.rows(), bt.cols());
        for j in 0..bt.rows() {
            let x = self.solve_vec(bt.row(j));
            xt.row_mut(j).copy_from_slice(&x);
        }
        xt.transpose()
    }

    /// `L · z`, e.g. to turn white noise into a correlated draw.
    pub fn lower_mul_vec(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| dot(&self.l.row(i)[..=i], &z[..=i])).collect()
    }
}

/// Cholesky factor of a symmetric positive definite band matrix.
///
/// Row `i` stores the entries `j ∈ [i − bw, i]` of the lower triangle.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    /// `lower(i, j)` must return `A[i][j]` for `i − bw ≤ j ≤ i`.
    pub fn new(n: usize, bw: usize, lower: impl Fn(usize, usize) -> f64, what: &'static str) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                band[i * w + (j + bw - i)] = lower(i, j);
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // A[i][j] - sum_k L[i][k] L[j][k], k in [max(i,j)-bw .. j)
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Factorization {
                            what,
                            pivot: i,
                            value: s,
                        });
                    }
                    band[i * w + bw] = libm::sqrt(s);
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = x[i];
            for (lij, xj) in row[(j0 + bw - i)..bw].iter().zip(&x[j0..i]) {
                s -= lij * xj;
            }
            x[i] = s / row[bw];
        }
        for i in (0..n).rev() {
            let row = &self.band[i * w..(i + 1) * w];
            x[i] /= row[bw];
            let xi = x[i];
            let j0 = i.saturating_sub(bw);
            for (xj, lij) in x[j0..i].iter_mut().zip(&row[(j0 + bw - i)..bw]) {
                *xj -= lij * xi;
            }
        }
    }
}
