//! Dense linear algebra used by the solvers and their oracles.
//!
//! Everything a solver needs from a matrix goes through [`LinearOperator`]:
//! a forward product and a transpose product. [`DenseOperator`] is the only
//! storage format; [`CountingOperator`] wraps any operator and counts
//! applications, which is how the tests check the cost of the estimators.

mod lu;
pub mod mmio;

use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

pub use lu::{direct_solve, quadratic_form_inverse, LuFactorization};

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix must be square with positive dimension (got {rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is singular to working precision (pivot {pivot:e} at step {step})")]
    SingularMatrix { step: usize, pivot: f64 },
    #[error("matrix market parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// A square real operator. Solvers only ever touch `A` through this trait.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// `y = A^T x`.
    fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_transpose_into(x, &mut y);
        y
    }

    /// Explicit entries, when the operator has them.
    fn as_dense(&self) -> Option<&DenseOperator> {
        None
    }
}

/// Dense square matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    dim: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    /// Builds an operator from row-major entries, rejecting non-square shapes
    /// and non-finite values.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(LinalgError::NotSquare {
                rows: dim,
                cols: data.len().checked_div(dim).unwrap_or(0),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(LinalgError::NotSquare {
                    rows: dim,
                    cols: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, d) in diag.iter().enumerate() {
            data[i * dim + i] = *d;
        }
        Self { dim, data }
    }

    pub fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)]);
            }
        }
        Self::new(n, data)
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        Self { dim: n, data }
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖A − Aᵀ‖_F / ‖A‖_F`, zero for the zero matrix.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.get(i, j) - self.get(j, i);
                acc += 2.0 * d * d;
            }
        }
        let norm = self.norm_fro();
        if norm == 0.0 {
            0.0
        } else {
            acc.sqrt() / norm
        }
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.symmetry_defect() <= rel_tol
    }

    /// Symmetric (to `1e-12`) with a successful Cholesky factorization.
    pub fn is_positive_definite(&self) -> bool {
        self.is_symmetric(1e-12) && self.to_nalgebra().cholesky().is_some()
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(self.row(i), x);
        }
    }

    fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (i, xi) in x.iter().enumerate() {
            axpy(*xi, self.row(i), y);
        }
    }

    fn as_dense(&self) -> Option<&DenseOperator> {
        Some(self)
    }
}

/// Wraps an operator and counts forward and transpose applications.
pub struct CountingOperator<'a, O: LinearOperator + ?Sized> {
    inner: &'a O,
    applies: AtomicUsize,
    transpose_applies: AtomicUsize,
}

impl<'a, O: LinearOperator + ?Sized> CountingOperator<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            applies: AtomicUsize::new(0),
            transpose_applies: AtomicUsize::new(0),
        }
    }

    pub fn applies(&self) -> usize {
        self.applies.load(Ordering::Relaxed)
    }

    pub fn transpose_applies(&self) -> usize {
        self.transpose_applies.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        self.applies() + self.transpose_applies()
    }

    pub fn reset(&self) {
        self.applies.store(0, Ordering::Relaxed);
        self.transpose_applies.store(0, Ordering::Relaxed);
    }
}

impl<O: LinearOperator + ?Sized> LinearOperator for CountingOperator<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.applies.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_into(x, y);
    }

    fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        self.transpose_applies.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_transpose_into(x, y);
    }

    fn as_dense(&self) -> Option<&DenseOperator> {
        self.inner.as_dense()
    }
}

/// `A x` with a dimension check.
pub fn mat_vec<O: LinearOperator + ?Sized>(a: &O, x: &[f64]) -> Result<Vec<f64>> {
    check_len(a.dim(), x.len())?;
    Ok(a.apply(x))
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(LinalgError::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `y += a x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn scale(a: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> DenseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseOperator::new(n, data).unwrap()
    }

    #[test]
    fn identity_mat_vec() {
        let a = DenseOperator::identity(3);
        assert_eq!(mat_vec(&a, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_mat_vec() {
        let a = DenseOperator::from_diagonal(&[1.0, 2.0]);
        assert_eq!(mat_vec(&a, &[1.0, 1.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn mat_vec_rejects_wrong_length() {
        let a = DenseOperator::identity(3);
        assert!(matches!(
            mat_vec(&a, &[1.0, 2.0]),
            Err(LinalgError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn apply_matches_transpose_of_explicit_transpose() {
        let a = random_matrix(10, 7);
        let at = a.transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y1 = a.apply(&x);
        let y2 = at.apply_transpose(&x);
        for (u, v) in y1.iter().zip(&y2) {
            assert!((u - v).abs() <= 1e-14 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            DenseOperator::new(2, vec![1.0; 3]),
            Err(LinalgError::NotSquare { .. })
        ));
        assert!(matches!(
            DenseOperator::new(2, vec![1.0, f64::NAN, 0.0, 1.0]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
        assert!(DenseOperator::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn counting_operator_counts() {
        let a = DenseOperator::identity(2);
        let c = CountingOperator::new(&a);
        c.apply(&[1.0, 0.0]);
        c.apply(&[1.0, 0.0]);
        c.apply_transpose(&[1.0, 0.0]);
        assert_eq!(c.applies(), 2);
        assert_eq!(c.transpose_applies(), 1);
        c.reset();
        assert_eq!(c.total(), 0);
    }

    proptest! {
        #[test]
        fn adjoint_identity(seed in 0u64..500, n in 1usize..12) {
            let a = random_matrix(n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = dot(&u, &a.apply(&v));
            let rhs = dot(&a.apply_transpose(&u), &v);
            let scale = norm2(&u) * norm2(&v) * a.norm_fro();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
        }
    }
}
