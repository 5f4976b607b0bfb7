//! Dense row-major matrices and jittered Cholesky factorization.
//!
//! Everything in this crate works with small dense systems (a few hundred
//! rows at most), so there is a single storage layout and no blocking.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{NsgpError, Result};

/// Relative tolerance used by [`cholesky_psd`] to decide symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Jitter is capped at this fraction of the mean diagonal.
pub const JITTER_CAP_FRACTION: f64 = 1e-2;

/// First escalation step when factorization fails with zero base jitter,
/// as a fraction of the mean diagonal.
const ZERO_BASE_START: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting bad shapes and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(NsgpError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NsgpError::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NsgpError::DimensionMismatch("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// A single-column matrix.
    pub fn column_vector(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(NsgpError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(NsgpError::DimensionMismatch(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(NsgpError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_to_diag(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest absolute entry.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Lower Cholesky factor of `A + jitter_used·I`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    lower: Matrix,
    jitter_used: f64,
}

/// Factorizes a symmetric matrix, adding diagonal jitter when needed.
///
/// The first attempt uses `base_jitter` as given. On failure the jitter is
/// multiplied by ten (or, from a zero base, started at `1e-10·mean(diag)`)
/// until it would exceed `1e-2·mean(diag)`.
pub fn cholesky_psd(a: &Matrix, base_jitter: f64) -> Result<CholFactor> {
    if !a.is_square() {
        return Err(NsgpError::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !(base_jitter >= 0.0 && base_jitter.is_finite()) {
        return Err(NsgpError::NonFinite(format!("base jitter {base_jitter}")));
    }
    let asymmetry = a.relative_asymmetry();
    if asymmetry > SYMMETRY_TOL {
        return Err(NsgpError::NonSymmetric { asymmetry });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(CholFactor {
            lower: Matrix::zeros(0, 0),
            jitter_used: base_jitter,
        });
    }
    let mean_diag = a.trace() / n as f64;
    let cap = JITTER_CAP_FRACTION * mean_diag;
    if !(mean_diag > 0.0) {
        return Err(NsgpError::NotPositiveDefinite { cap });
    }

    let mut jitter = base_jitter;
    loop {
        if let Some(lower) = try_cholesky(a, jitter) {
            return Ok(CholFactor {
                lower,
                jitter_used: jitter,
            });
        }
        jitter = if jitter == 0.0 {
            ZERO_BASE_START * mean_diag
        } else {
            jitter * 10.0
        };
        if jitter > cap {
            return Err(NsgpError::NotPositiveDefinite { cap });
        }
    }
}

fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = l.row(j)[..j].to_vec();
        let d = a[(j, j)] + jitter - lj.iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let li = &l.row(i)[..j];
            let dot: f64 = li.iter().zip(&lj).map(|(x, y)| x * y).sum();
            l[(i, j)] = (a[(i, j)] - dot) / djj;
        }
    }
    Some(l)
}

impl CholFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    fn check_rows(&self, b: &Matrix) -> Result<()> {
        if b.rows() != self.dim() {
            return Err(NsgpError::DimensionMismatch(format!(
                "factor is {n}x{n}, right-hand side has {} rows",
                b.rows(),
                n = self.dim()
            )));
        }
        Ok(())
    }

    /// Solves `L·X = B`.
    pub fn solve_lower(&self, b: &Matrix) -> Result<Matrix> {
        self.check_rows(b)?;
        let l = &self.lower;
        let mut x = b.clone();
        let cols = b.cols();
        for i in 0..self.dim() {
            let (done, rest) = x.as_mut_slice().split_at_mut(i * cols);
            let xi = &mut rest[..cols];
            for (k, &lik) in l.row(i)[..i].iter().enumerate() {
                if lik == 0.0 {
                    continue;
                }
                for (v, &xk) in xi.iter_mut().zip(&done[k * cols..(k + 1) * cols]) {
                    *v -= lik * xk;
                }
            }
            let d = l[(i, i)];
            xi.iter_mut().for_each(|v| *v /= d);
        }
        Ok(x)
    }

    /// Solves `Lᵀ·X = B`.
    pub fn solve_lower_t(&self, b: &Matrix) -> Result<Matrix> {
        self.check_rows(b)?;
        let l = &self.lower;
        let n = self.dim();
        let cols = b.cols();
        let mut x = b.clone();
        for i in (0..n).rev() {
            let (head, tail) = x.as_mut_slice().split_at_mut((i + 1) * cols);
            let xi = &mut head[i * cols..];
            for k in (i + 1)..n {
                let lki = l[(k, i)];
                if lki == 0.0 {
                    continue;
                }
                let off = (k - i - 1) * cols;
                for (v, &xk) in xi.iter_mut().zip(&tail[off..off + cols]) {
                    *v -= lki * xk;
                }
            }
            let d = l[(i, i)];
            xi.iter_mut().for_each(|v| *v /= d);
        }
        Ok(x)
    }

    /// Solves `(A + jitter·I)·X = B` by forward then back substitution.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        self.solve_lower_t(&self.solve_lower(b)?)
    }

    /// Solves against a vector right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve(&Matrix::column_vector(b))?.into_vec())
    }

    /// `log|A + jitter·I|`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Explicit `(A + jitter·I)⁻¹`, symmetric by construction.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let linv = self
            .solve_lower(&Matrix::identity(n))
            .expect("identity has matching rows");
        // (LLᵀ)⁻¹ = L⁻ᵀ·L⁻¹; row k of L⁻¹ is zero beyond column k.
        let mut inv = Matrix::zeros(n, n);
        for k in 0..n {
            let row = &linv.row(k)[..=k];
            for (i, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out = &mut inv.row_mut(i)[..=i];
                for (o, &b) in out.iter_mut().zip(&row[..=i]) {
                    *o += a * b;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                inv[(j, i)] = inv[(i, j)];
            }
        }
        inv
    }
}

/// Free-function form of [`CholFactor::solve`].
pub fn solve_chol(factor: &CholFactor, b: &Matrix) -> Result<Matrix> {
    factor.solve(b)
}

/// Free-function form of [`CholFactor::logdet`].
pub fn logdet(factor: &CholFactor) -> f64 {
    factor.logdet()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
