//! Small dense linear algebra for the CCA stage.
//!
//! Everything here works on caller-provided buffers so that a classifier can
//! run without allocating after construction. Allocating wrappers exist for
//! convenience and tests.

use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::precision::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular matrix: pivot {pivot:e} in column {column} below tolerance {threshold:e}")]
    Singular {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NotConverged { estimate: f64, iterations: usize },
    #[error("non-finite value encountered")]
    NonFinite,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
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

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn copy_from(&mut self, other: &Matrix<T>) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.copy_from_slice(&other.data);
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Matrix<T> {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `out = self * rhs`.
    pub fn mul_into(&self, rhs: &Matrix<T>, out: &mut Matrix<T>) {
        assert_eq!(self.cols, rhs.rows);
        assert_eq!((out.rows, out.cols), (self.rows, rhs.cols));
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc += self[(i, k)] * rhs[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
    }

    /// `out = self * rhs^T`.
    pub fn mul_transpose_into(&self, rhs: &Matrix<T>, out: &mut Matrix<T>) {
        assert_eq!(self.cols, rhs.cols);
        assert_eq!((out.rows, out.cols), (self.rows, rhs.rows));
        for i in 0..self.rows {
            for j in 0..rhs.rows {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc += self[(i, k)] * rhs[(j, k)];
                }
                out[(i, j)] = acc;
            }
        }
    }

    pub fn mul(&self, rhs: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        self.mul_into(rhs, &mut out);
        out
    }

    /// `out = self * v`.
    pub fn mul_vec_into(&self, v: &[T], out: &mut [T]) {
        assert_eq!(v.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self
                .row(i)
                .iter()
                .zip(v)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
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

/// Gauss-Jordan inversion with partial pivoting, into preallocated buffers.
///
/// `work` is overwritten with the row-reduced copy of `a`; `out` receives the
/// inverse. A pivot whose magnitude falls below `T::PIVOT_TOLERANCE` times the
/// largest entry of `a` is reported as singular.
pub fn invert_gauss_jordan_into<T: Real>(
    a: &Matrix<T>,
    work: &mut Matrix<T>,
    out: &mut Matrix<T>,
) -> Result<(), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    if (work.rows, work.cols) != (n, n) || (out.rows, out.cols) != (n, n) {
        return Err(LinalgError::Dimension("inverse scratch buffers".into()));
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }

    let threshold = T::PIVOT_TOLERANCE * a.max_abs();
    work.copy_from(a);
    out.fill(T::zero());
    for i in 0..n {
        out[(i, i)] = T::one();
    }

    for col in 0..n {
        let mut pivot_row = col;
        let mut best = work[(col, col)].abs();
        for r in col + 1..n {
            let v = work[(r, col)].abs();
            if v > best {
                best = v;
                pivot_row = r;
            }
        }
        if !(best > threshold) {
            return Err(LinalgError::Singular {
                column: col,
                pivot: best.as_f64(),
                threshold: threshold.as_f64(),
            });
        }
        if pivot_row != col {
            for j in 0..n {
                work.data.swap(col * n + j, pivot_row * n + j);
                out.data.swap(col * n + j, pivot_row * n + j);
            }
        }

        let inv_pivot = T::one() / work[(col, col)];
        for j in 0..n {
            work[(col, j)] *= inv_pivot;
            out[(col, j)] *= inv_pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work[(r, col)];
            if factor == T::zero() {
                continue;
            }
            for j in 0..n {
                let w = work[(col, j)];
                let o = out[(col, j)];
                work[(r, j)] -= factor * w;
                out[(r, j)] -= factor * o;
            }
        }
    }
    Ok(())
}

pub fn invert_gauss_jordan<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
    let mut work = Matrix::zeros(a.rows, a.cols);
    let mut out = Matrix::zeros(a.rows, a.cols);
    invert_gauss_jordan_into(a, &mut work, &mut out)?;
    Ok(out)
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    if b.len() != n {
        return Err(LinalgError::Dimension("right-hand side length".into()));
    }
    if a.data.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let threshold = T::PIVOT_TOLERANCE * a.max_abs();
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
            .unwrap_or(col);
        let best = m[(pivot_row, col)].abs();
        if !(best > threshold) {
            return Err(LinalgError::Singular {
                column: col,
                pivot: best.as_f64(),
                threshold: threshold.as_f64(),
            });
        }
        if pivot_row != col {
            for j in 0..n {
                m.data.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let factor = m[(r, col)] / m[(col, col)];
            if factor == T::zero() {
                continue;
            }
            for j in col..n {
                let v = m[(col, j)];
                m[(r, j)] -= factor * v;
            }
            let v = x[col];
            x[r] -= factor * v;
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= m[(i, j)] * x[j];
        }
        x[i] = acc / m[(i, i)];
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions<T> {
    /// Relative change of the Rayleigh estimate that counts as converged.
    pub tol: T,
    pub max_iters: usize,
}

impl<T: Real> Default for PowerOptions<T> {
    fn default() -> Self {
        PowerOptions {
            tol: T::POWER_TOLERANCE,
            max_iters: 500,
        }
    }
}

/// Iteration vectors for [`power_iteration_into`].
#[derive(Debug, Clone)]
pub struct PowerScratch<T> {
    v: Vec<T>,
    w: Vec<T>,
    gv: Vec<T>,
}

impl<T: Real> PowerScratch<T> {
    pub fn new(n: usize) -> Self {
        PowerScratch {
            v: vec![T::zero(); n],
            w: vec![T::zero(); n],
            gv: vec![T::zero(); n],
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Dominant eigenvalue by power iteration from the normalized all-ones vector.
///
/// With `metric = Some(G)` the estimate is the G-weighted Rayleigh quotient
/// `(v' G M v) / (v' G v)`. For `M = G^-1 B` with `G` SPD and `B` symmetric
/// (the CCA product matrix) `M` is self-adjoint in that inner product, so the
/// estimate converges at the squared rate of the plain quotient.
///
/// Returns `(lambda, iterations)`. Converges when the relative change of the
/// estimate drops below `opts.tol`, or when `M v` is parallel to `v` within
/// `opts.tol`.
pub fn power_iteration_into<T: Real>(
    m: &Matrix<T>,
    metric: Option<&Matrix<T>>,
    opts: PowerOptions<T>,
    scratch: &mut PowerScratch<T>,
) -> Result<(T, usize), LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    if let Some(g) = metric {
        if (g.rows, g.cols) != (n, n) {
            return Err(LinalgError::Dimension("metric must match matrix".into()));
        }
    }
    if scratch.v.len() != n {
        return Err(LinalgError::Dimension("power iteration scratch".into()));
    }
    if n == 0 {
        return Ok((T::zero(), 0));
    }

    let start = T::one() / T::from_usize(n).sqrt();
    scratch.v.iter_mut().for_each(|x| *x = start);
    let mut previous: Option<T> = None;
    let mut lambda = T::zero();

    for iter in 1..=opts.max_iters {
        m.mul_vec_into(&scratch.v, &mut scratch.w);
        lambda = match metric {
            Some(g) => {
                g.mul_vec_into(&scratch.v, &mut scratch.gv);
                dot(&scratch.gv, &scratch.w) / dot(&scratch.gv, &scratch.v)
            }
            None => dot(&scratch.v, &scratch.w) / dot(&scratch.v, &scratch.v),
        };
        if !lambda.is_finite() {
            return Err(LinalgError::NonFinite);
        }

        let norm = dot(&scratch.w, &scratch.w).sqrt();
        if norm == T::zero() {
            // v lies in the null space: M v = 0 v.
            return Ok((T::zero(), iter));
        }
        let residual = scratch
            .w
            .iter()
            .zip(&scratch.v)
            .fold(T::zero(), |acc, (&w, &v)| {
                let d = w - lambda * v;
                acc + d * d
            })
            .sqrt();
        if residual <= opts.tol * norm {
            return Ok((lambda, iter));
        }
        if let Some(prev) = previous {
            if (lambda - prev).abs() < opts.tol * lambda.abs() {
                return Ok((lambda, iter));
            }
        }
        previous = Some(lambda);
        let inv = T::one() / norm;
        for (v, &w) in scratch.v.iter_mut().zip(&scratch.w) {
            *v = w * inv;
        }
    }
    Err(LinalgError::NotConverged {
        estimate: lambda.as_f64(),
        iterations: opts.max_iters,
    })
}

pub fn dominant_eigenvalue_power_iteration<T: Real>(
    m: &Matrix<T>,
    opts: PowerOptions<T>,
) -> Result<(T, usize), LinalgError> {
    let mut scratch = PowerScratch::new(m.rows());
    power_iteration_into(m, None, opts, &mut scratch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut a = b.mul(&b.transpose());
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        a
    }

    #[test]
    fn identity_inverse_is_exact() {
        let i = Matrix::<f64>::identity(5);
        assert_eq!(invert_gauss_jordan(&i).unwrap(), i);
    }

    #[test]
    fn diagonal_inverse() {
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let inv = invert_gauss_jordan(&a).unwrap();
        assert_eq!(inv.as_slice(), &[0.5, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let inv = invert_gauss_jordan(&a).unwrap();
        assert_eq!(inv.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn random_spd_inverse_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = random_spd(8, &mut rng);
            let prod = a.mul(&invert_gauss_jordan(&a).unwrap());
            for i in 0..8 {
                for j in 0..8 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[(i, j)] - e).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn random_spd_inverse_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a64 = random_spd(8, &mut rng);
            let a = Matrix::from_fn(8, 8, |i, j| a64[(i, j)] as f32);
            let prod = a.mul(&invert_gauss_jordan(&a).unwrap());
            for i in 0..8 {
                for j in 0..8 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[(i, j)] - e).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(
            invert_gauss_jordan(&a),
            Err(LinalgError::Singular { column: 1, .. })
        ));
        let z = Matrix::<f64>::zeros(3, 3);
        assert!(matches!(invert_gauss_jordan(&z), Err(LinalgError::Singular { .. })));
        let r = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(invert_gauss_jordan(&r), Err(LinalgError::NotSquare { .. })));
    }

    #[test]
    fn power_iteration_diagonal() {
        let a = Matrix::from_rows(&[vec![3.0f64, 0.0], vec![0.0, 1.0]]).unwrap();
        let (l, _) = dominant_eigenvalue_power_iteration(&a, PowerOptions::default()).unwrap();
        assert!((l - 3.0).abs() < 3.0 * 1e-10);
    }

    #[test]
    fn power_iteration_repeated_eigenvalue() {
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let (l, iters) = dominant_eigenvalue_power_iteration(&a, PowerOptions::default()).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(iters, 1);
    }

    #[test]
    fn power_iteration_reports_non_convergence() {
        // Rotation by 90 degrees: eigenvalues +-i, no dominant real one.
        let a = Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let opts = PowerOptions { tol: 1e-10, max_iters: 20 };
        assert!(matches!(
            dominant_eigenvalue_power_iteration(&a, opts),
            Err(LinalgError::NotConverged { iterations: 20, .. })
        ));
    }

    #[test]
    fn zero_matrix_has_zero_eigenvalue() {
        let z = Matrix::<f64>::zeros(4, 4);
        let (l, _) = dominant_eigenvalue_power_iteration(&z, PowerOptions::default()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn metric_rayleigh_matches_plain() {
        // M = G^-1 B with G SPD, B SPD: both quotients reach the same limit.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_spd(6, &mut rng);
        let b = random_spd(6, &mut rng);
        let m = invert_gauss_jordan(&g).unwrap().mul(&b);
        let mut s = PowerScratch::new(6);
        let opts = PowerOptions { tol: 1e-13, max_iters: 5000 };
        let (plain, _) = power_iteration_into(&m, None, opts, &mut s).unwrap();
        let (weighted, _) = power_iteration_into(&m, Some(&g), opts, &mut s).unwrap();
        assert!((plain - weighted).abs() < 1e-9 * plain);
    }
}
