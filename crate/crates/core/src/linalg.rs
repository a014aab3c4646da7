//! Small dense matrices. Every system solved in this crate has at most a
//! dozen unknowns, so plain row-major storage with partial-pivot LU and a
//! cyclic Jacobi eigensolver is all that is needed.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("dimension mismatch")]
    Dimension,
}

impl<T: Scalar> Matrix<T> {
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += w * x xᵀ`
    pub fn add_outer(&mut self, w: T, x: &[T]) {
        debug_assert!(self.is_square() && x.len() == self.rows);
        for i in 0..self.rows {
            let wi = w * x[i];
            if wi == T::zero() {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, xj) in row.iter_mut().zip(x) {
                *r += wi * *xj;
            }
        }
    }

    /// `self += w * a bᵀ`
    pub fn add_outer2(&mut self, w: T, a: &[T], b: &[T]) {
        debug_assert!(a.len() == self.rows && b.len() == self.cols);
        for i in 0..self.rows {
            let wi = w * a[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, bj) in row.iter_mut().zip(b) {
                *r += wi * *bj;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add(&mut self, other: &Matrix<T>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| crate::scalar::dot(self.row(i), x))
            .collect()
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
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

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        crate::scalar::max_abs(&self.data)
    }

    /// Solve `self · x = b` by LU with partial pivoting.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        let lu = Lu::factor(self)?;
        Ok(lu.solve(b))
    }

    pub fn inverse(&self) -> Result<Matrix<T>, LinalgError> {
        let lu = Lu::factor(self)?;
        let n = self.rows;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = lu.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as columns.
    pub fn symmetric_eigen(&self) -> Result<(Vec<T>, Matrix<T>), LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::Dimension);
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut v = Matrix::identity(n);
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            let scale = a.max_abs();
            if off.sqrt() <= eps * scale || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let vals = (0..n).map(|i| a[(i, i)]).collect();
        Ok((vals, v))
    }

    /// Minimum-norm least-squares solution of `self · x = b` for a symmetric
    /// positive semidefinite `self`; eigenvalues below `RANK_TOL` times the
    /// largest are treated as zero. Also returns the numerical rank.
    pub fn psd_pinv_solve(&self, b: &[T]) -> Result<(Vec<T>, usize), LinalgError> {
        let n = self.rows;
        if b.len() != n {
            return Err(LinalgError::Dimension);
        }
        let (vals, vecs) = self.symmetric_eigen()?;
        let top = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let cut = top * T::lit(T::RANK_TOL);
        let mut x = vec![T::zero(); n];
        let mut rank = 0;
        for (k, &lam) in vals.iter().enumerate() {
            if lam <= cut || lam <= T::zero() {
                continue;
            }
            rank += 1;
            let mut proj = T::zero();
            for i in 0..n {
                proj += vecs[(i, k)] * b[i];
            }
            let coef = proj / lam;
            for i in 0..n {
                x[i] += coef * vecs[(i, k)];
            }
        }
        Ok((x, rank))
    }

    /// Orthonormal basis of the numerical null space of a symmetric positive
    /// semidefinite matrix, using the same rank cut as [`Self::psd_pinv_solve`].
    pub fn psd_null_space(&self) -> Result<Vec<Vec<T>>, LinalgError> {
        let (vals, vecs) = self.symmetric_eigen()?;
        let top = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let cut = top * T::lit(T::RANK_TOL);
        Ok(vals
            .iter()
            .enumerate()
            .filter(|(_, lam)| **lam <= cut || **lam <= T::zero())
            .map(|(k, _)| (0..self.rows).map(|i| vecs[(i, k)]).collect())
            .collect())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorisation with row pivoting, `P A = L U`.
struct Lu<T> {
    n: usize,
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    fn factor(a: &Matrix<T>) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::Dimension);
        }
        if !a.is_finite() {
            return Err(LinalgError::Singular);
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        if scale == T::zero() {
            return Err(LinalgError::Singular);
        }
        let tiny = scale * T::lit(T::RANK_TOL);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= tiny {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f == T::zero() {
                    continue;
                }
                for j in (k + 1)..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= f * v;
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[(i, k)];
                let xk = x[k];
                x[i] -= l * xk;
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let u = self.lu[(i, k)];
                let xk = x[k];
                x[i] -= u * xk;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_and_inverse_agree() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ]);
        let b = [1.0_f64, 2.0, 3.0];
        let x = a.solve(&b).unwrap();
        let inv = a.inverse().unwrap();
        let y = inv.mul_vec(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-13);
        }
        let back = a.mul_vec(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(a.solve(&[1.0, 1.0]), Err(LinalgError::Singular));
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = Matrix::from_rows(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ]);
        let (vals, vecs) = a.symmetric_eigen().unwrap();
        let mut rebuilt = Matrix::zeros(3, 3);
        for k in 0..3 {
            let col: Vec<f64> = (0..3).map(|i| vecs[(i, k)]).collect();
            rebuilt.add_outer(vals[k], &col);
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((rebuilt[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pinv_matches_solve_when_full_rank_and_handles_rank_one() {
        let a = Matrix::<f64>::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let (x, rank) = a.psd_pinv_solve(&[1.0, 1.0]).unwrap();
        assert_eq!(rank, 2);
        let y = a.solve(&[1.0, 1.0]).unwrap();
        assert!((x[0] - y[0]).abs() < 1e-12 && (x[1] - y[1]).abs() < 1e-12);

        // rank one: A = v vᵀ with v = (1, 1); b in range
        let r1 = Matrix::<f64>::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let (x, rank) = r1.psd_pinv_solve(&[2.0, 2.0]).unwrap();
        assert_eq!(rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
