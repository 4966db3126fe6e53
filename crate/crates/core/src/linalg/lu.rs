//! LU factorization with partial pivoting; the ground-truth oracle for `A⁻¹b`.

use super::{check_len, dot, DenseOperator, LinalgError, Result};

/// Pivots below this fraction of `‖A‖_∞` are treated as zero.
const SINGULAR_RTOL: f64 = 1e-14;

/// `PA = LU`, stored packed: unit-lower `L` below the diagonal, `U` on and above.
#[derive(Clone, Debug)]
pub struct LuFactorization {
    dim: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuFactorization {
    pub fn new(a: &DenseOperator) -> Result<Self> {
        let n = a.dim;
        let tol = SINGULAR_RTOL * a.norm_inf();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if pivot <= tol || pivot == 0.0 {
                return Err(LinalgError::SingularMatrix { step: k, pivot });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let diag = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / diag;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { dim: n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        check_len(n, b.len())?;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu[i * n..i * n + i], &y[..i]);
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu[i * n + i + 1..(i + 1) * n], &y[i + 1..]);
            y[i] = (y[i] - s) / self.lu[i * n + i];
        }
        Ok(y)
    }

    /// `P`, `L`, `U` as separate dense matrices.
    pub fn factors(&self) -> (DenseOperator, DenseOperator, DenseOperator) {
        let n = self.dim;
        let mut p = vec![0.0; n * n];
        let mut l = vec![0.0; n * n];
        let mut u = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + self.perm[i]] = 1.0;
            for j in 0..n {
                let v = self.lu[i * n + j];
                match j.cmp(&i) {
                    std::cmp::Ordering::Less => l[i * n + j] = v,
                    std::cmp::Ordering::Equal => {
                        l[i * n + j] = 1.0;
                        u[i * n + j] = v;
                    }
                    std::cmp::Ordering::Greater => u[i * n + j] = v,
                }
            }
        }
        (
            DenseOperator { dim: n, data: p },
            DenseOperator { dim: n, data: l },
            DenseOperator { dim: n, data: u },
        )
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn direct_solve(a: &DenseOperator, b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.dim, b.len())?;
    LuFactorization::new(a)?.solve(b)
}

/// `rᵀ A⁻¹ r`, the squared A-norm of the error whose residual is `r`.
pub fn quadratic_form_inverse(a: &DenseOperator, r: &[f64]) -> Result<f64> {
    let y = direct_solve(a, r)?;
    Ok(dot(r, &y))
}
