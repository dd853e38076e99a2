//! Small dense linear algebra for the nuisance regressions and the GEE solver.
//!
//! Dimensions here are tiny (a handful of covariates, 2x2 GEE systems), so a
//! row-major `Vec` with straightforward loops is all that is needed.

use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is singular or not positive definite")]
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() })
    }

    /// Builds an `n x p` matrix from `p` columns of length `n`.
    pub fn from_columns(columns: &[&[T]]) -> Result<Self, LinalgError> {
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(LinalgError::Dimension("columns differ in length".into()));
        }
        Ok(Self::from_fn(rows, columns.len(), |r, c| columns[c][r]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
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
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>, LinalgError> {
        if v.len() != self.cols {
            return Err(LinalgError::Dimension("matvec length".into()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `A^T A`.
    pub fn gram(&self) -> Self {
        let mut g = Self::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                let ri = row[i];
                for j in i..self.cols {
                    g[(i, j)] += ri * row[j];
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    /// `A^T v`.
    pub fn t_matvec(&self, v: &[T]) -> Result<Vec<T>, LinalgError> {
        if v.len() != self.rows {
            return Err(LinalgError::Dimension("t_matvec length".into()));
        }
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            let w = v[r];
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * w;
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::Dimension("inverse of non-square matrix".into()));
        }
        let n = self.rows;
        let scale = self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        if scale == T::zero() {
            return Err(LinalgError::Singular);
        }
        let tol = scale * T::epsilon() * T::from_count(n.max(1)) * T::lit(16.0);
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[(x, col)].abs().partial_cmp(&a[(y, col)].abs()).unwrap())
                .unwrap();
            if a[(pivot, col)].abs() <= tol {
                return Err(LinalgError::Singular);
            }
            a.swap_rows(pivot, col);
            inv.swap_rows(pivot, col);
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let (ac, ic) = (a[(col, j)], inv[(col, j)]);
                    a[(r, j)] -= f * ac;
                    inv[(r, j)] -= f * ic;
                }
            }
        }
        Ok(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for c in 0..self.cols {
                self.data.swap(a * self.cols + c, b * self.cols + c);
            }
        }
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Result<Self, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::Dimension("cholesky of non-square matrix".into()));
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) {
                return Err(LinalgError::Singular);
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Solves `A x = b` for symmetric positive definite `A`.
    pub fn cholesky_solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        let l = self.cholesky()?;
        let n = l.rows;
        if b.len() != n {
            return Err(LinalgError::Dimension("rhs length".into()));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = l[(i, k)] * y[k];
                y[i] -= v;
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let v = l[(k, i)] * y[k];
                y[i] -= v;
            }
            y[i] /= l[(i, i)];
        }
        Ok(y)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Householder QR that moves numerically aliased columns to the end while
/// keeping the order of the remaining columns (the same limited pivoting
/// strategy as LINPACK's `dqrdc2`).
#[derive(Debug, Clone)]
pub struct AliasingQr<T> {
    /// Householder vectors below the diagonal, `R` on and above it.
    qr: Matrix<T>,
    tau: Vec<T>,
    /// `perm[k]` is the original column stored at position `k`.
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl<T: Real> AliasingQr<T> {
    pub fn new(a: &Matrix<T>, tol: T) -> Self {
        let (n, p) = (a.rows(), a.cols());
        let mut qr = a.clone();
        let mut perm: Vec<usize> = (0..p).collect();
        let orig_norms: Vec<T> =
            (0..p).map(|c| (0..n).map(|r| a[(r, c)] * a[(r, c)]).sum::<T>().sqrt()).collect();
        let mut tau = vec![T::zero(); p.min(n)];
        let mut rank = p.min(n);
        let mut k = 0;
        while k < rank {
            let norm = (k..n).map(|r| qr[(r, k)] * qr[(r, k)]).sum::<T>().sqrt();
            let reference = orig_norms[perm[k]];
            if norm <= tol * reference.max(T::min_positive_value()) {
                // Rotate the aliased column to the end and retry this slot.
                for r in 0..n {
                    let row = &mut qr.data[r * p..(r + 1) * p];
                    row[k..].rotate_left(1);
                }
                perm[k..].rotate_left(1);
                rank -= 1;
                continue;
            }
            let x0 = qr[(k, k)];
            let alpha = if x0 > T::zero() { -norm } else { norm };
            let v0 = x0 - alpha;
            // v = x - alpha e1, scaled so v[0] = 1.
            for r in (k + 1)..n {
                qr[(r, k)] /= v0;
            }
            let t = (alpha - x0) / alpha;
            tau[k] = t;
            qr[(k, k)] = alpha;
            for c in (k + 1)..p {
                let mut s = qr[(k, c)];
                for r in (k + 1)..n {
                    s += qr[(r, k)] * qr[(r, c)];
                }
                s *= t;
                qr[(k, c)] -= s;
                for r in (k + 1)..n {
                    let v = qr[(r, k)];
                    qr[(r, c)] -= s * v;
                }
            }
            k += 1;
        }
        Self { qr, tau, perm, rank }
    }

    /// Overwrites `y` with `Q^T y`.
    pub fn apply_qt(&self, y: &mut [T]) {
        let n = self.qr.rows();
        for k in 0..self.rank {
            let mut s = y[k];
            for r in (k + 1)..n {
                s += self.qr[(r, k)] * y[r];
            }
            s *= self.tau[k];
            y[k] -= s;
            for r in (k + 1)..n {
                y[r] -= s * self.qr[(r, k)];
            }
        }
    }

    /// Least-squares coefficients for the first `rank` (non-aliased) columns,
    /// in their stored order.
    pub fn solve(&self, y: &[T]) -> Vec<T> {
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let k = self.rank;
        let mut b = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut s = qty[i];
            for j in (i + 1)..k {
                s -= self.qr[(i, j)] * b[j];
            }
            b[i] = s / self.qr[(i, i)];
        }
        b
    }

    /// `(R^T R)^{-1}` for the non-aliased block, i.e. `(X^T X)^{-1}` restricted
    /// to the kept columns.
    pub fn unscaled_covariance(&self) -> Matrix<T> {
        let k = self.rank;
        let mut rinv = Matrix::zeros(k, k);
        for j in 0..k {
            rinv[(j, j)] = T::one() / self.qr[(j, j)];
            for i in (0..j).rev() {
                let mut s = T::zero();
                for m in (i + 1)..=j {
                    s += self.qr[(i, m)] * rinv[(m, j)];
                }
                rinv[(i, j)] = -s / self.qr[(i, i)];
            }
        }
        Matrix::from_fn(k, k, |a, b| {
            (a.max(b)..k).map(|m| rinv[(a, m)] * rinv[(b, m)]).sum::<T>()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_2x2() {
        let m = Matrix::from_rows(&[vec![4.0f64, 7.0], vec![2.0, 6.0]]).unwrap();
        let inv = m.inverse().unwrap();
        let prod = m.matmul(&inv).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - e).abs() < 1e-12);
            }
        }
        let singular = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(singular.inverse(), Err(LinalgError::Singular));
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::from_rows(&[
            vec![4.0f64, 2.0, 0.6],
            vec![2.0, 5.0, 1.0],
            vec![0.6, 1.0, 3.0],
        ])
        .unwrap();
        let x = a.cholesky_solve(&[1.0, 2.0, 3.0]).unwrap();
        let back = a.matvec(&x).unwrap();
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-12);
        }
    }

    #[test]
    fn qr_drops_duplicate_column_and_keeps_order() {
        let x = Matrix::from_rows(&[
            vec![1.0f64, 1.0, 1.0, 0.5],
            vec![1.0, 2.0, 2.0, -1.0],
            vec![1.0, 3.0, 3.0, 2.0],
            vec![1.0, 4.0, 4.0, 0.0],
            vec![1.0, 5.0, 5.0, 1.0],
        ])
        .unwrap();
        let qr = AliasingQr::new(&x, 1e-7);
        assert_eq!(qr.rank, 3);
        assert_eq!(qr.perm, vec![0, 1, 3, 2]);
    }

    #[test]
    fn qr_matches_normal_equations() {
        let x = Matrix::from_rows(&[
            vec![1.0f64, 0.3, 2.0],
            vec![1.0, -1.2, 0.5],
            vec![1.0, 0.8, -0.7],
            vec![1.0, 2.2, 1.1],
            vec![1.0, -0.4, 0.0],
            vec![1.0, 1.5, -2.0],
        ])
        .unwrap();
        let y = [1.0, 0.0, 2.5, 3.1, -0.2, 0.9];
        let qr = AliasingQr::new(&x, 1e-7);
        let b = qr.solve(&y);
        let ne = x.gram().cholesky_solve(&x.t_matvec(&y).unwrap()).unwrap();
        for (a, e) in b.iter().zip(&ne) {
            assert!((a - e).abs() < 1e-12);
        }
        let cov = qr.unscaled_covariance();
        let ginv = x.gram().inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov[(i, j)] - ginv[(i, j)]).abs() < 1e-12);
            }
        }
    }
}
