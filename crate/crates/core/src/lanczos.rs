//! Lanczos processes and the Jacobi matrices behind the quadrature estimates.
//!
//! CG and BiCG implicitly run a Lanczos process on `(A, r_0)`; the Jacobi
//! matrix can be rebuilt from the CG coefficients with [`jacobi_from_cg`]
//! instead of running [`sym_lanczos`]. The Gauss rule value
//! `(T_k⁻¹)₁,₁ = Σ_{j<k} α_j‖r_j‖² / ‖r_0‖²` is [`t_inv_11`].
//!
//! No reorthogonalization is performed.

use thiserror::Error;

use crate::linalg::{axpy, dot, norm2, scale, LinearOperator};
use crate::solvers::SolveTrace;

/// `‖w‖` below this fraction of `‖A v_k‖` ends the process (invariant subspace).
const LUCKY_RTOL: f64 = 1e-12;
/// `|(z, w)| ≤ SERIOUS_RTOL ‖z‖‖w‖` is a serious breakdown.
const SERIOUS_RTOL: f64 = 1e-13;
/// Tolerance on the starting-vector normalization.
const START_RTOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LanczosError {
    #[error("starting vector must be non-zero")]
    ZeroStart,
    #[error("requested {k} steps but the operator has dimension {dim}")]
    TooManySteps { k: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("starting vectors must satisfy ‖v1‖ = 1 and (v1, ṽ1) = 1 (got {norm}, {inner})")]
    BadStart { norm: f64, inner: f64 },
    #[error("beta_{index} = {value} is negative")]
    NonPositiveBeta { index: usize, value: f64 },
    #[error("step coefficient {index} = {value} is zero or not finite")]
    InvalidStep { index: usize, value: f64 },
    #[error("expected {expected} betas, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("index {k} exceeds the {len} available records")]
    OutOfRange { k: usize, len: usize },
}

/// Tridiagonal matrix of recurrence coefficients.
///
/// `sup[i]` sits at `(i, i+1)` and `sub[i]` at `(i+1, i)`; they coincide in
/// the symmetric case.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobiMatrix {
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub sub: Vec<f64>,
}

impl JacobiMatrix {
    pub fn symmetric(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1));
        Self {
            sub: off.clone(),
            sup: off,
            diag,
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.sup == self.sub
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = self.diag[i];
            if i + 1 < n {
                m[i][i + 1] = self.sup[i];
                m[i + 1][i] = self.sub[i];
            }
        }
        m
    }

    /// `(T⁻¹)₁,₁` from the LU pivots of `T` (no pivoting).
    pub fn inverse_11(&self) -> f64 {
        // (T⁻¹)₁,₁ = Σ_j c_j² / d_j, c_1 = 1, c_{j+1} = -c_j · sub_j / d_j,
        // weighted by the matching factor through sup_j.
        let mut total = 0.0;
        let mut d = 0.0;
        let mut weight = 1.0;
        for (j, a) in self.diag.iter().enumerate() {
            if j == 0 {
                d = *a;
            } else {
                let coupling = self.sup[j - 1] * self.sub[j - 1];
                weight *= coupling / (d * d);
                d = a - coupling / d;
            }
            total += weight / d;
        }
        total
    }

    /// Eigenvalues of a symmetric Jacobi matrix, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let n = self.dim();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self.to_dense()[i][j]);
        let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LanczosStop {
    /// All requested steps completed.
    Completed,
    /// An invariant subspace was found after `step` steps.
    Lucky { step: usize },
    /// `(z_k, w_k) ≈ 0` with both vectors non-zero, after `step` steps.
    Serious { step: usize },
}

/// Lanczos vectors. `v_tilde` is only populated by the nonsymmetric process.
#[derive(Clone, Debug)]
pub struct LanczosBasis {
    pub v: Vec<Vec<f64>>,
    pub v_tilde: Vec<Vec<f64>>,
    /// Unnormalized continuation `z_k` (so `A V_k = V_k T_k + z_k ε_kᵀ`).
    pub residual: Vec<f64>,
    /// Its shadow `w_k` (nonsymmetric only).
    pub residual_tilde: Vec<f64>,
    /// `η̃_k`, the coefficient that would scale `v_{k+1}`.
    pub final_coupling: f64,
}

#[derive(Clone, Debug)]
pub struct LanczosRun {
    pub basis: LanczosBasis,
    pub jacobi: JacobiMatrix,
    pub stop: LanczosStop,
}

/// Symmetric Lanczos in modified Gram-Schmidt form, `k` steps from `v`.
pub fn sym_lanczos<O: LinearOperator + ?Sized>(
    a: &O,
    v: &[f64],
    k: usize,
) -> Result<LanczosRun, LanczosError> {
    let n = a.dim();
    if v.len() != n {
        return Err(LanczosError::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    if k > n {
        return Err(LanczosError::TooManySteps { k, dim: n });
    }
    let vn = norm2(v);
    if vn == 0.0 || k == 0 {
        return Err(LanczosError::ZeroStart);
    }

    let mut basis = vec![scale(1.0 / vn, v)];
    let mut diag = Vec::with_capacity(k);
    let mut off = Vec::with_capacity(k);
    let mut prev_beta = 0.0;
    let mut stop = LanczosStop::Completed;
    let mut w = vec![0.0; n];

    for step in 1..=k {
        let vk = &basis[step - 1];
        a.apply_into(vk, &mut w);
        let av_norm = norm2(&w);
        if step > 1 {
            axpy(-prev_beta, &basis[step - 2], &mut w);
        }
        let alpha = dot(vk, &w);
        axpy(-alpha, vk, &mut w);
        diag.push(alpha);
        let beta = norm2(&w);
        if step == k {
            let residual = w.clone();
            return Ok(LanczosRun {
                basis: LanczosBasis {
                    v: basis,
                    v_tilde: Vec::new(),
                    residual,
                    residual_tilde: Vec::new(),
                    final_coupling: beta,
                },
                jacobi: JacobiMatrix::symmetric(diag, off),
                stop,
            });
        }
        if beta <= LUCKY_RTOL * av_norm {
            stop = LanczosStop::Lucky { step };
            return Ok(LanczosRun {
                basis: LanczosBasis {
                    v: basis,
                    v_tilde: Vec::new(),
                    residual: w,
                    residual_tilde: Vec::new(),
                    final_coupling: beta,
                },
                jacobi: JacobiMatrix::symmetric(diag, off),
                stop,
            });
        }
        off.push(beta);
        basis.push(scale(1.0 / beta, &w));
        prev_beta = beta;
    }
    unreachable!("loop returns on the last step")
}

/// Unit-norm `v1` along `r0` and the matching shadow start with `(v1, ṽ1) = 1`.
pub fn nonsym_start(r0: &[f64]) -> Result<(Vec<f64>, Vec<f64>), LanczosError> {
    let nrm = norm2(r0);
    if nrm == 0.0 {
        return Err(LanczosError::ZeroStart);
    }
    let v1 = scale(1.0 / nrm, r0);
    let inner = dot(&v1, &v1);
    let vt1 = scale(1.0 / inner, &v1);
    Ok((v1, vt1))
}

/// Two-sided (nonsymmetric) Lanczos.
///
/// The product `(z_k, w_k)` is split as `η̃_k = √|(z_k, w_k)|` and
/// `η_k = (z_k, w_k) / η̃_k`, so the sign lives in the super-diagonal.
pub fn nonsym_lanczos<O: LinearOperator + ?Sized>(
    a: &O,
    v1: &[f64],
    vtilde1: &[f64],
    k: usize,
) -> Result<LanczosRun, LanczosError> {
    let n = a.dim();
    for v in [v1, vtilde1] {
        if v.len() != n {
            return Err(LanczosError::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    if k > n {
        return Err(LanczosError::TooManySteps { k, dim: n });
    }
    if k == 0 {
        return Err(LanczosError::ZeroStart);
    }
    let norm = norm2(v1);
    let inner = dot(v1, vtilde1);
    if (norm - 1.0).abs() > START_RTOL || (inner - 1.0).abs() > START_RTOL {
        return Err(LanczosError::BadStart { norm, inner });
    }

    let mut v = vec![v1.to_vec()];
    let mut vt = vec![vtilde1.to_vec()];
    let mut diag = Vec::with_capacity(k);
    let mut sup: Vec<f64> = Vec::with_capacity(k);
    let mut sub: Vec<f64> = Vec::with_capacity(k);
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];

    for step in 1..=k {
        let vk = &v[step - 1];
        let vtk = &vt[step - 1];
        a.apply_into(vk, &mut z);
        a.apply_transpose_into(vtk, &mut w);
        let az_norm = norm2(&z);
        let aw_norm = norm2(&w);
        let omega = dot(vtk, &z);
        axpy(-omega, vk, &mut z);
        axpy(-omega, vtk, &mut w);
        if step > 1 {
            axpy(-sup[step - 2], &v[step - 2], &mut z);
            axpy(-sub[step - 2], &vt[step - 2], &mut w);
        }
        diag.push(omega);

        let zw = dot(&z, &w);
        let zn = norm2(&z);
        let wn = norm2(&w);
        let eta_tilde = zw.abs().sqrt();
        let finish = |stop, z: Vec<f64>, w: Vec<f64>, v, vt, diag, sup, sub| LanczosRun {
            basis: LanczosBasis {
                v,
                v_tilde: vt,
                residual: z,
                residual_tilde: w,
                final_coupling: eta_tilde,
            },
            jacobi: JacobiMatrix { diag, sup, sub },
            stop,
        };
        if step == k {
            return Ok(finish(LanczosStop::Completed, z, w, v, vt, diag, sup, sub));
        }
        if zn <= LUCKY_RTOL * az_norm || wn <= LUCKY_RTOL * aw_norm {
            return Ok(finish(
                LanczosStop::Lucky { step },
                z.clone(),
                w.clone(),
                v,
                vt,
                diag,
                sup,
                sub,
            ));
        }
        if zw.abs() <= SERIOUS_RTOL * zn * wn {
            return Ok(finish(
                LanczosStop::Serious { step },
                z.clone(),
                w.clone(),
                v,
                vt,
                diag,
                sup,
                sub,
            ));
        }
        let eta = zw / eta_tilde;
        v.push(scale(1.0 / eta_tilde, &z));
        vt.push(scale(1.0 / eta, &w));
        sup.push(eta);
        sub.push(eta_tilde);
    }
    unreachable!("loop returns on the last step")
}

/// Jacobi matrix from CG coefficients `γ_0..γ_{m-1}` and `β_1..β_{m-1}`:
/// `α_k = 1/γ_{k-1} + β_{k-1}/γ_{k-2}`, `η_k = √β_k / γ_{k-1}`, with
/// `β_0 = 0` and `γ_{-1} = 1`.
pub fn jacobi_from_cg(gammas: &[f64], betas: &[f64]) -> Result<JacobiMatrix, LanczosError> {
    let m = gammas.len();
    if m == 0 {
        return Ok(JacobiMatrix::symmetric(Vec::new(), Vec::new()));
    }
    if betas.len() + 1 != m {
        return Err(LanczosError::LengthMismatch {
            expected: m - 1,
            found: betas.len(),
        });
    }
    for (index, &value) in gammas.iter().enumerate() {
        if value == 0.0 || !value.is_finite() {
            return Err(LanczosError::InvalidStep { index, value });
        }
    }
    for (i, &value) in betas.iter().enumerate() {
        if value < 0.0 || value.is_nan() {
            return Err(LanczosError::NonPositiveBeta {
                index: i + 1,
                value,
            });
        }
    }
    let mut diag = Vec::with_capacity(m);
    let mut off = Vec::with_capacity(m - 1);
    for k in 0..m {
        let mut alpha = 1.0 / gammas[k];
        if k > 0 {
            alpha += betas[k - 1] / gammas[k - 1];
        }
        diag.push(alpha);
        if k + 1 < m {
            off.push(betas[k].sqrt() / gammas[k]);
        }
    }
    Ok(JacobiMatrix::symmetric(diag, off))
}

/// The Jacobi matrix of the first `k` steps of a CG (or BiCG) trace.
pub fn jacobi_from_trace(trace: &SolveTrace, k: usize) -> Result<JacobiMatrix, LanczosError> {
    if k > trace.len() {
        return Err(LanczosError::OutOfRange {
            k,
            len: trace.len(),
        });
    }
    let gammas: Vec<f64> = trace.records[..k].iter().map(|r| r.step_coeff).collect();
    let betas: Vec<f64> = trace.records[..k.saturating_sub(1)]
        .iter()
        .map(|r| r.beta)
        .collect();
    jacobi_from_cg(&gammas, &betas)
}

/// `(T_k⁻¹)₁,₁ = Σ_{j<k} α_j ‖r_j‖² / ‖r_0‖²`.
pub fn t_inv_11(trace: &SolveTrace, k: usize) -> Result<f64, LanczosError> {
    if k > trace.len() {
        return Err(LanczosError::OutOfRange {
            k,
            len: trace.len(),
        });
    }
    if k == 0 {
        return Ok(0.0);
    }
    let s: f64 = trace.records[..k].iter().map(|r| r.energy_step()).sum();
    Ok(s / trace.r0_norm_sq)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::linalg::{direct_solve, DenseOperator};
    use crate::solvers::{cg_solve, SolveOptions, StoppingCriterion};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, seed: u64) -> DenseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        DenseOperator::from_nalgebra(&((&g + g.transpose()) * 0.5)).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn diag12_trace() -> SolveTrace {
        let a = DenseOperator::from_diagonal(&[1.0, 2.0]);
        let o = SolveOptions::new(10, StoppingCriterion::residual(1e-15));
        cg_solve(&a, &[1.0, 1.0], &[0.0, 0.0], &o).unwrap().trace
    }

    /// Dense oracle: first component of `T⁻¹ e_1` by LU.
    fn dense_inverse_11(t: &JacobiMatrix) -> f64 {
        let m = DenseOperator::from_rows(&t.to_dense()).unwrap();
        let mut e1 = vec![0.0; t.dim()];
        e1[0] = 1.0;
        direct_solve(&m, &e1).unwrap()[0]
    }

    #[test]
    fn identity_breaks_down_after_one_step() {
        let a = DenseOperator::identity(4);
        let run = sym_lanczos(&a, &[1.0, 0.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(run.stop, LanczosStop::Lucky { step: 1 });
        assert_eq!(run.jacobi.diag, vec![1.0]);
        assert_eq!(run.basis.v.len(), 1);
    }

    #[test]
    fn diag12_jacobi_matrix() {
        let a = DenseOperator::from_diagonal(&[1.0, 2.0]);
        let s = 0.5f64.sqrt();
        let run = sym_lanczos(&a, &[s, s], 2).unwrap();
        let t = &run.jacobi;
        assert!((t.diag[0] - 1.5).abs() < 1e-15);
        assert!((t.diag[1] - 1.5).abs() < 1e-15);
        assert!((t.sup[0] - 0.5).abs() < 1e-15);
        let ev = t.symmetric_eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn full_lanczos_recovers_spectrum() {
        let n = 30;
        let a = random_sym(n, 31);
        let v = random_vec(n, 32);
        let run = sym_lanczos(&a, &v, n).unwrap();
        let ev = run.jacobi.symmetric_eigenvalues();
        let mut exact: Vec<f64> = nalgebra::SymmetricEigen::new(a.to_nalgebra())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        exact.sort_by(f64::total_cmp);
        for (x, y) in ev.iter().zip(&exact) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn three_term_relation_holds() {
        let n = 25;
        let a = random_sym(n, 33);
        let v = random_vec(n, 34);
        let k = 10;
        let run = sym_lanczos(&a, &v, k).unwrap();
        let t = run.jacobi.to_dense();
        let norm_a = a.norm_fro();
        for j in 0..k {
            let mut col = a.apply(&run.basis.v[j]);
            for i in 0..k {
                axpy(-t[i][j], &run.basis.v[i], &mut col);
            }
            if j == k - 1 {
                axpy(-1.0, &run.basis.residual, &mut col);
            }
            assert!(norm2(&col) <= 1e-8 * norm_a);
        }
        for i in 0..k {
            for j in 0..k {
                let g = dot(&run.basis.v[i], &run.basis.v[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lanczos_input_validation() {
        let a = DenseOperator::identity(2);
        assert_eq!(
            sym_lanczos(&a, &[0.0, 0.0], 1).unwrap_err(),
            LanczosError::ZeroStart
        );
        assert!(matches!(
            sym_lanczos(&a, &[1.0, 0.0], 3),
            Err(LanczosError::TooManySteps { .. })
        ));
        assert!(matches!(
            nonsym_lanczos(&a, &[2.0, 0.0], &[0.5, 0.0], 1),
            Err(LanczosError::BadStart { .. })
        ));
    }

    #[test]
    fn nonsymmetric_reduces_to_symmetric() {
        let n = 12;
        let a = random_sym(n, 35);
        let (v1, vt1) = nonsym_start(&random_vec(n, 36)).unwrap();
        let ns = nonsym_lanczos(&a, &v1, &vt1, 8).unwrap();
        let sy = sym_lanczos(&a, &v1, 8).unwrap();
        for (x, y) in ns.jacobi.diag.iter().zip(&sy.jacobi.diag) {
            assert!((x - y).abs() < 1e-10);
        }
        for ((x, y), z) in ns.jacobi.sup.iter().zip(&ns.jacobi.sub).zip(&sy.jacobi.sup) {
            assert!((x - z).abs() < 1e-10 && (y - z).abs() < 1e-10);
        }
    }

    #[test]
    fn nonsymmetric_identity_lucky() {
        let a = DenseOperator::identity(3);
        let (v1, vt1) = nonsym_start(&[1.0, 2.0, 2.0]).unwrap();
        let run = nonsym_lanczos(&a, &v1, &vt1, 3).unwrap();
        assert!((run.jacobi.diag[0] - 1.0).abs() < 1e-15);
        assert_eq!(run.stop, LanczosStop::Lucky { step: 1 });
    }

    #[test]
    fn nonsymmetric_biorthogonality_and_relations() {
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = DenseOperator::from_nalgebra(&(g + DMatrix::identity(n, n) * 4.0)).unwrap();
        let (v1, vt1) = nonsym_start(&random_vec(n, 38)).unwrap();
        let k = 15;
        let run = nonsym_lanczos(&a, &v1, &vt1, k).unwrap();
        assert_eq!(run.stop, LanczosStop::Completed);
        for i in 0..k {
            for j in 0..k {
                let g = dot(&run.basis.v_tilde[i], &run.basis.v[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-6, "({i},{j}) {g}");
            }
        }
        // A V_k = V_k T_k + z_k ε_kᵀ and Aᵀ Ṽ_k = Ṽ_k T_kᵀ + w_k ε_kᵀ
        let t = run.jacobi.to_dense();
        let norm_a = a.norm_fro();
        for j in 0..k {
            let mut col = a.apply(&run.basis.v[j]);
            let mut colt = a.apply_transpose(&run.basis.v_tilde[j]);
            for i in 0..k {
                axpy(-t[i][j], &run.basis.v[i], &mut col);
                axpy(-t[j][i], &run.basis.v_tilde[i], &mut colt);
            }
            if j == k - 1 {
                axpy(-1.0, &run.basis.residual, &mut col);
                axpy(-1.0, &run.basis.residual_tilde, &mut colt);
            }
            assert!(norm2(&col) <= 1e-8 * norm_a);
            assert!(norm2(&colt) <= 1e-8 * norm_a);
        }
        for (e, et) in run.jacobi.sup.iter().zip(&run.jacobi.sub) {
            assert!(*et > 0.0);
            assert!(e.abs() > 0.0);
        }
    }

    #[test]
    fn jacobi_from_cg_small_cases() {
        let t = jacobi_from_cg(&[1.0], &[]).unwrap();
        assert_eq!(t.diag, vec![1.0]);
        let t = jacobi_from_cg(&[2.0 / 3.0, 0.75], &[1.0 / 9.0]).unwrap();
        assert!((t.diag[0] - 1.5).abs() < 1e-15);
        assert!((t.diag[1] - 1.5).abs() < 1e-15);
        assert!((t.sup[0] - 0.5).abs() < 1e-15);
        assert!(matches!(
            jacobi_from_cg(&[1.0, 1.0], &[-0.1]),
            Err(LanczosError::NonPositiveBeta { index: 1, .. })
        ));
        assert!(matches!(
            jacobi_from_cg(&[1.0, 1.0], &[]),
            Err(LanczosError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn diag12_trace_matches_lanczos() {
        let trace = diag12_trace();
        let t = jacobi_from_trace(&trace, 2).unwrap();
        let s = 0.5f64.sqrt();
        let l = sym_lanczos(&DenseOperator::from_diagonal(&[1.0, 2.0]), &[s, s], 2).unwrap();
        for (x, y) in t.diag.iter().zip(&l.jacobi.diag) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!((t.sup[0] - l.jacobi.sup[0]).abs() < 1e-14);
    }

    #[test]
    fn t_inv_11_small_cases() {
        let trace = diag12_trace();
        assert_eq!(t_inv_11(&trace, 0).unwrap(), 0.0);
        assert!((t_inv_11(&trace, 2).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(
            t_inv_11(&trace, 3),
            Err(LanczosError::OutOfRange { .. })
        ));
    }

    #[test]
    fn t_inv_11_matches_dense_tridiagonal_inverse() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let spd = &g * g.transpose() + DMatrix::identity(n, n);
        let a = DenseOperator::from_nalgebra(&((&spd + spd.transpose()) * 0.5)).unwrap();
        let b = random_vec(n, 40);
        let o = SolveOptions::new(20, StoppingCriterion::residual(1e-15));
        let trace = cg_solve(&a, &b, &[0.0; 30], &o).unwrap().trace;
        for k in 1..=trace.len() {
            let t = jacobi_from_trace(&trace, k).unwrap();
            let oracle = dense_inverse_11(&t);
            let got = t_inv_11(&trace, k).unwrap();
            assert!((got - oracle).abs() <= 1e-8 * oracle.abs(), "k={k}");
            assert!((t.inverse_11() - oracle).abs() <= 1e-8 * oracle.abs());
        }
        // monotone non-decreasing in k
        for k in 1..trace.len() {
            assert!(t_inv_11(&trace, k + 1).unwrap() >= t_inv_11(&trace, k).unwrap());
        }
    }
}
