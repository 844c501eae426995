//! Small dense complex linear algebra: Hermitian Cholesky, triangular
//! inversion and Householder least squares.
//!
//! Matrices are row-major. Sizes here are at most a few hundred columns, so
//! straightforward loops are adequate.

use std::ops::{Index, IndexMut};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{count, Real, C};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CMatrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "matrix data",
                left: rows * cols,
                right: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> C<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
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

    pub fn row(&self, r: usize) -> &[C<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [C<T>] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<C<T>> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let o = out.row_mut(r);
            for (k, &akr) in a.iter().enumerate() {
                if akr.re == T::zero() && akr.im == T::zero() {
                    continue;
                }
                for (oc, &b) in o.iter_mut().zip(other.row(k)) {
                    *oc = *oc + akr * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[C<T>]) -> Vec<C<T>> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .fold(C::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b)
            })
            .collect()
    }

    /// `selfᴴ v`.
    pub fn adjoint_mul_vec(&self, v: &[C<T>]) -> Vec<C<T>> {
        assert_eq!(self.rows, v.len(), "adjoint_mul_vec shape mismatch");
        let mut out = vec![C::new(T::zero(), T::zero()); self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o = *o + a.conj() * vr;
            }
        }
        out
    }

    /// `selfᴴ self / scale`, exploiting Hermitian symmetry.
    pub fn gram(&self, scale: T) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for r in 0..self.rows {
            accumulate_outer(&mut g, self.row(r));
        }
        finish_gram(&mut g, scale);
        g
    }

    pub fn trace(&self) -> C<T> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .fold(C::new(T::zero(), T::zero()), |a, b| a + b)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt()
    }
}

impl<T: Real> Index<(usize, usize)> for CMatrix<T> {
    type Output = C<T>;
    fn index(&self, (r, c): (usize, usize)) -> &C<T> {
        &self.data[r * self.cols + c]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C<T> {
        &mut self.data[r * self.cols + c]
    }
}

/// Adds `conj(x) xᵀ` into the upper triangle of `g`.
pub(crate) fn accumulate_outer<T: Real>(g: &mut CMatrix<T>, x: &[C<T>]) {
    let n = x.len();
    for i in 0..n {
        let xi = x[i].conj();
        if xi.re == T::zero() && xi.im == T::zero() {
            continue;
        }
        let row = g.row_mut(i);
        for j in i..n {
            row[j] = row[j] + xi * x[j];
        }
    }
}

/// Mirrors the upper triangle and divides by `scale`.
pub(crate) fn finish_gram<T: Real>(g: &mut CMatrix<T>, scale: T) {
    let n = g.rows();
    for i in 0..n {
        for j in i..n {
            let v = g[(i, j)] / scale;
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
        let d = g[(i, i)].re;
        g[(i, i)] = C::new(d, T::zero());
    }
}

/// Result of a Cholesky factorization `A = L Lᴴ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T: Real> {
    pub lower: CMatrix<T>,
}

/// Hermitian Cholesky factorization.
///
/// A pivot whose square falls below `rel_tol` times the original diagonal
/// entry is treated as rank deficiency and reported by column index.
pub fn cholesky<T: Real>(a: &CMatrix<T>, rel_tol: T) -> Result<Cholesky<T>> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "cholesky needs a square matrix");
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d = d - l[(j, k)].norm_sqr();
        }
        let diag = a[(j, j)].re;
        if !(d > rel_tol * diag) || !(diag > T::zero()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(j));
        }
        let ljj = d.sqrt();
        l[(j, j)] = C::new(ljj, T::zero());
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(Cholesky { lower: l })
}

impl<T: Real> Cholesky<T> {
    /// Solves `A x = b`.
    pub fn solve(&self, b: &[C<T>]) -> Vec<C<T>> {
        let y = forward_substitute(&self.lower, b);
        backward_substitute_adjoint(&self.lower, &y)
    }

    /// `A⁻¹`, column by column.
    pub fn inverse(&self) -> CMatrix<T> {
        let n = self.lower.rows();
        let mut inv = CMatrix::zeros(n, n);
        for c in 0..n {
            let mut e = vec![C::new(T::zero(), T::zero()); n];
            e[c] = C::new(T::one(), T::zero());
            for (r, v) in self.solve(&e).into_iter().enumerate() {
                inv[(r, c)] = v;
            }
        }
        inv
    }

    /// `(Lᴴ)⁻¹`, an upper-triangular matrix.
    pub fn inverse_adjoint(&self) -> CMatrix<T> {
        invert_lower(&self.lower).adjoint()
    }
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_substitute<T: Real>(l: &CMatrix<T>, b: &[C<T>]) -> Vec<C<T>> {
    let n = l.rows();
    let mut y = vec![C::new(T::zero(), T::zero()); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᴴ x = y` for lower-triangular `L`.
pub fn backward_substitute_adjoint<T: Real>(l: &CMatrix<T>, y: &[C<T>]) -> Vec<C<T>> {
    let n = l.rows();
    let mut x = vec![C::new(T::zero(), T::zero()); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[(k, i)].conj() * x[k];
        }
        x[i] = s / l[(i, i)].conj();
    }
    x
}

/// Inverse of a lower-triangular matrix.
pub fn invert_lower<T: Real>(l: &CMatrix<T>) -> CMatrix<T> {
    let n = l.rows();
    let mut inv = CMatrix::zeros(n, n);
    for c in 0..n {
        inv[(c, c)] = C::new(T::one(), T::zero()) / l[(c, c)];
        for r in (c + 1)..n {
            let mut s = C::new(T::zero(), T::zero());
            for k in c..r {
                s = s + l[(r, k)] * inv[(k, c)];
            }
            inv[(r, c)] = -s / l[(r, r)];
        }
    }
    inv
}

/// Least-squares solution of `min ‖A x − b‖² + λ‖x‖²` by Householder QR
/// on the augmented system `[A; √λ I] x ≈ [b; 0]`.
///
/// Columns are equilibrated to unit norm before factorization and the
/// scaling is undone afterwards.
pub fn least_squares<T: Real>(a: &CMatrix<T>, b: &[C<T>], loading: T) -> Result<Vec<C<T>>> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m {
        return Err(Error::LengthMismatch {
            what: "least squares rhs",
            left: m,
            right: b.len(),
        });
    }
    let zero = C::new(T::zero(), T::zero());
    let extra = if loading > T::zero() { n } else { 0 };
    let rows = m + extra;
    if rows < n {
        return Err(Error::UnderdeterminedRegion {
            region: 0,
            rows: m,
            cols: n,
        });
    }
    // Column-major working copy with unit-norm columns.
    let mut scale = vec![T::one(); n];
    let mut cols: Vec<Vec<C<T>>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut col: Vec<C<T>> = (0..m).map(|r| a[(r, j)]).collect();
        let nrm = col.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
        if nrm > T::zero() {
            scale[j] = nrm;
            for x in &mut col {
                *x = *x / nrm;
            }
        }
        if extra > 0 {
            col.resize(rows, zero);
            col[m + j] = C::new(loading.sqrt() / scale[j], T::zero());
        }
        cols.push(col);
    }
    let mut rhs: Vec<C<T>> = b.to_vec();
    rhs.resize(rows, zero);

    let mut rdiag = vec![zero; n];
    for k in 0..n {
        let norm_x = cols[k][k..].iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
        if norm_x == T::zero() {
            return Err(Error::DegenerateRegion { region: 0, column: k });
        }
        let x0 = cols[k][k];
        let phase = if x0.norm() > T::zero() {
            x0 / x0.norm()
        } else {
            C::new(T::one(), T::zero())
        };
        let alpha = -phase * norm_x;
        // v = x - alpha e1, normalized.
        let mut v: Vec<C<T>> = cols[k][k..].to_vec();
        v[0] = v[0] - alpha;
        let vn = v.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
        for x in &mut v {
            *x = *x / vn;
        }
        let two = T::one() + T::one();
        for col in cols.iter_mut().skip(k + 1) {
            let dot = v
                .iter()
                .zip(&col[k..])
                .fold(zero, |acc, (vi, ci)| acc + vi.conj() * ci);
            let f = dot * two;
            for (ci, vi) in col[k..].iter_mut().zip(&v) {
                *ci = *ci - vi * f;
            }
        }
        let dot = v
            .iter()
            .zip(&rhs[k..])
            .fold(zero, |acc, (vi, ci)| acc + vi.conj() * ci);
        let f = dot * two;
        for (ci, vi) in rhs[k..].iter_mut().zip(&v) {
            *ci = *ci - vi * f;
        }
        rdiag[k] = alpha;
        cols[k][k] = alpha;
    }
    // Back substitution on R x = (Qᴴ b)[..n].
    let mut x = vec![zero; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in (i + 1)..n {
            s = s - cols[j][i] * x[j];
        }
        if rdiag[i].norm() <= T::eps() * count::<T>(rows) {
            return Err(Error::DegenerateRegion { region: 0, column: i });
        }
        x[i] = s / rdiag[i];
    }
    Ok(x.into_iter().zip(scale).map(|(v, s)| v / s).collect())
}

#[inline]
pub fn czero<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    fn hpd3() -> CMatrix<f64> {
        let b = CMatrix::from_fn(5, 3, |r, c| {
            cplx(((r * 3 + c) as f64 * 0.7).sin(), ((r + 2 * c) as f64 * 1.3).cos())
        });
        b.gram(1.0)
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = hpd3();
        let ch = cholesky(&a, 1e-14).unwrap();
        let back = ch.lower.matmul(&ch.lower.adjoint());
        assert!(back.max_abs_diff(&a) < 1e-12);
        let inv = ch.inverse();
        assert!(inv.matmul(&a).max_abs_diff(&CMatrix::identity(3)) < 1e-10);
        let t = ch.inverse_adjoint();
        assert!(ch.lower.adjoint().matmul(&t).max_abs_diff(&CMatrix::identity(3)) < 1e-12);
    }

    #[test]
    fn cholesky_flags_rank_deficiency() {
        let mut a = CMatrix::<f64>::identity(3);
        a[(0, 1)] = cplx(1.0, 0.0);
        a[(1, 0)] = cplx(1.0, 0.0);
        match cholesky(&a, 1e-12) {
            Err(Error::NotPositiveDefinite(1)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn least_squares_exact_system() {
        let a = CMatrix::from_fn(6, 2, |r, c| cplx::<f64>((r + 1) as f64, (c * r) as f64));
        let x_true = [cplx(0.3, -1.0), cplx(-2.0, 0.5)];
        let b = a.mul_vec(&x_true);
        let x = least_squares(&a, &b, 0.0).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).norm() < 1e-12);
        }
    }
}
