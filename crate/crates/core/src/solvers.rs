//! CG, BiCG and BiCGSTAB with per-iteration coefficient traces.
//!
//! Every solver records, for each completed step `k`, the step length
//! (`γ_k` for CG, `α_k` for BiCG/BiCGSTAB), the next direction coefficient
//! `β_{k+1}`, `‖r_k‖²` and the Rayleigh quotient `μ(p_k) = p_kᵀAp_k / ‖p_k‖²`.
//! The online estimators in [`crate::estimators`] read nothing else.
//!
//! Breakdown is not an error: the solver stops, marks the trace with
//! [`Termination::Breakdown`] and returns what it has so the estimates
//! computed so far stay usable.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::estimators::{self, L2Variant};
use crate::linalg::{axpy, dot, norm2, LinearOperator};

/// Relative tolerance for breakdown of the scalar recurrences.
pub const BREAKDOWN_RTOL: f64 = 1e-14;

/// Relative symmetry defect accepted by [`cg_solve`].
pub const SYMMETRY_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: operator has dimension {expected}, vector has length {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("CG requires a symmetric operator (relative defect {defect:e})")]
    NotSymmetric { defect: f64 },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cg,
    Bicg,
    Bicgstab,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cg => "cg",
            Method::Bicg => "bicg",
            Method::Bicgstab => "bicgstab",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cg" => Ok(Method::Cg),
            "bicg" => Ok(Method::Bicg),
            "bicgstab" => Ok(Method::Bicgstab),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    Converged,
    MaxIter,
    Breakdown,
}

/// Which scalar vanished when a solver broke down.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BreakdownKind {
    /// `p_kᵀAp_k ≤ 0` (CG on a matrix that is not positive definite) or
    /// `p̃_kᵀAp_k ≈ 0` (BiCG/BiCGSTAB).
    Curvature,
    /// `r̃_kᵀr_k ≈ 0`.
    ShadowResidual,
    /// BiCGSTAB stabilization step with `Ask = 0`.
    Stabilization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `γ_k` (CG) or `α_k` (BiCG, BiCGSTAB).
    pub step_coeff: f64,
    /// `β_{k+1}`.
    pub beta: f64,
    /// `‖r_k‖²`.
    pub res_norm_sq: f64,
    /// `r̃_kᵀr_k`; absent for CG.
    pub shadow_res_dot: Option<f64>,
    /// `μ(p_k) = p_kᵀAp_k / ‖p_k‖²`.
    pub mu_p: f64,
    /// `x_k`, only when iterates were requested.
    pub x_snapshot: Option<Vec<f64>>,
}

impl IterationRecord {
    /// `α_k ‖r_k‖²`, the exact per-step decrease of the squared A-norm error.
    #[inline]
    pub fn energy_step(&self) -> f64 {
        self.step_coeff * self.res_norm_sq
    }
}

#[derive(Clone, Debug)]
pub struct SolveTrace {
    pub method: Method,
    pub r0_norm_sq: f64,
    pub b_norm: f64,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub breakdown: Option<BreakdownKind>,
    /// `‖r_K‖²` where `K = records.len()`.
    pub final_res_norm_sq: f64,
    /// `x_K`, only when iterates were requested.
    pub final_iterate: Option<Vec<f64>>,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn step_coeffs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.step_coeff).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.beta).collect()
    }

    /// `‖r_k‖²` for `k = 0..=K`.
    pub fn res_norm_sq(&self, k: usize) -> Option<f64> {
        match k.cmp(&self.records.len()) {
            std::cmp::Ordering::Less => Some(self.records[k].res_norm_sq),
            std::cmp::Ordering::Equal => Some(self.final_res_norm_sq),
            std::cmp::Ordering::Greater => None,
        }
    }

    /// `x_0, …, x_K` when iterates were recorded.
    pub fn iterates(&self) -> Option<Vec<&[f64]>> {
        let mut out = Vec::with_capacity(self.records.len() + 1);
        for r in &self.records {
            out.push(r.x_snapshot.as_deref()?);
        }
        out.push(self.final_iterate.as_deref()?);
        Some(out)
    }

    /// One CSV row per record: `k, step_coeff, beta, res_norm_sq, shadow_res_dot, mu_p`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        #[derive(Serialize)]
        struct Row {
            k: usize,
            step_coeff: f64,
            beta: f64,
            res_norm_sq: f64,
            shadow_res_dot: Option<f64>,
            mu_p: f64,
        }
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.records {
            wtr.serialize(Row {
                k: r.k,
                step_coeff: r.step_coeff,
                beta: r.beta,
                res_norm_sq: r.res_norm_sq,
                shadow_res_dot: r.shadow_res_dot,
                mu_p: r.mu_p,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CriterionKind {
    ResidualRelative,
    ANormEstimate,
    L2NormEstimate,
}

/// When to stop iterating.
///
/// `ResidualRelative` stops on `‖r_{k+1}‖/‖b‖ ≤ threshold`. The estimate
/// kinds stop when the square root of the delayed BiCGQL estimate
/// (A-norm or l2-norm of the error) falls to `threshold`; they are only
/// evaluated once `k ≥ d1 + d2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingCriterion {
    pub kind: CriterionKind,
    pub threshold: f64,
    pub d1: usize,
    pub d2: usize,
    pub l2_variant: L2Variant,
}

impl StoppingCriterion {
    pub fn residual(threshold: f64) -> Self {
        Self {
            kind: CriterionKind::ResidualRelative,
            threshold,
            d1: 0,
            d2: 0,
            l2_variant: L2Variant::Consistent,
        }
    }

    pub fn anorm(threshold: f64, d1: usize) -> Self {
        Self {
            kind: CriterionKind::ANormEstimate,
            threshold,
            d1,
            d2: 0,
            l2_variant: L2Variant::Consistent,
        }
    }

    pub fn l2(threshold: f64, d1: usize, d2: usize) -> Self {
        Self {
            kind: CriterionKind::L2NormEstimate,
            threshold,
            d1,
            d2,
            l2_variant: L2Variant::Consistent,
        }
    }

    pub fn with_l2_variant(mut self, variant: L2Variant) -> Self {
        self.l2_variant = variant;
        self
    }

    /// Iterations needed before the criterion can be evaluated.
    pub fn warmup(&self) -> usize {
        match self.kind {
            CriterionKind::ResidualRelative => 0,
            CriterionKind::ANormEstimate => self.d1,
            CriterionKind::L2NormEstimate => self.d1 + self.d2,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(SolverError::InvalidOptions(format!(
                "threshold must be finite and positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Evaluated after step `k` has been recorded.
    fn is_met(&self, records: &[IterationRecord], next_res_norm_sq: f64, res_scale: f64) -> bool {
        let k = records.len() - 1;
        if k < self.warmup() {
            return false;
        }
        match self.kind {
            CriterionKind::ResidualRelative => {
                next_res_norm_sq.sqrt() / res_scale <= self.threshold
            }
            CriterionKind::ANormEstimate => estimators::anorm_partial_sum(records, k, self.d1)
                .map(|g| g.abs().sqrt() <= self.threshold)
                .unwrap_or(false),
            CriterionKind::L2NormEstimate => {
                estimators::l2_partial_sum(records, k, self.d1, self.d2, self.l2_variant)
                    .map(|f| f.abs().sqrt() <= self.threshold)
                    .unwrap_or(false)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub criterion: StoppingCriterion,
    /// Store `x_k` in every record (needed for ground-truth errors).
    pub record_iterates: bool,
}

impl SolveOptions {
    pub fn new(max_iter: usize, criterion: StoppingCriterion) -> Self {
        Self {
            max_iter,
            criterion,
            record_iterates: false,
        }
    }

    pub fn with_iterates(mut self) -> Self {
        self.record_iterates = true;
        self
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.max_iter == 0 {
            return Err(SolverError::InvalidOptions(
                "max_iter must be at least 1".into(),
            ));
        }
        self.criterion.validate()
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Vec<f64>,
    pub trace: SolveTrace,
}

/// How BiCG updates the shadow search direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ShadowDirectionRule {
    /// `p̃_{k+1} = r̃_{k+1} + β_{k+1} p̃_k`.
    #[default]
    Standard,
    /// `p̃_{k+1} = r̃_{k+1} + β_{k+1} r̃_k`, kept to measure how much
    /// bi-orthogonality it loses.
    PreviousShadowResidual,
}

/// Vectors at the end of one BiCG step, handed to an observer.
pub struct BicgStep<'a> {
    pub k: usize,
    pub p: &'a [f64],
    pub p_shadow: &'a [f64],
    pub r_next: &'a [f64],
    pub r_shadow_next: &'a [f64],
}

fn check_dims<O: LinearOperator + ?Sized>(a: &O, vs: &[&[f64]]) -> Result<(), SolverError> {
    let n = a.dim();
    for v in vs {
        if v.len() != n {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    Ok(())
}

fn residual<O: LinearOperator + ?Sized>(a: &O, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = a.apply(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Collects records and assembles the trace once the termination is known.
struct TraceBuilder {
    method: Method,
    r0_norm_sq: f64,
    b_norm: f64,
    res_scale: f64,
    records: Vec<IterationRecord>,
    record_iterates: bool,
}

impl TraceBuilder {
    fn new(method: Method, b: &[f64], r0: &[f64], record_iterates: bool) -> Self {
        let r0_norm_sq = dot(r0, r0);
        let b_norm = norm2(b);
        let res_scale = if b_norm > 0.0 {
            b_norm
        } else {
            r0_norm_sq.sqrt()
        };
        Self {
            method,
            r0_norm_sq,
            b_norm,
            res_scale,
            records: Vec::new(),
            record_iterates,
        }
    }

    fn snapshot(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.record_iterates.then(|| x.to_vec())
    }

    fn finish(
        self,
        x: Vec<f64>,
        termination: Termination,
        breakdown: Option<BreakdownKind>,
        final_res_norm_sq: f64,
    ) -> Solution {
        let final_iterate = self.record_iterates.then(|| x.clone());
        Solution {
            x,
            trace: SolveTrace {
                method: self.method,
                r0_norm_sq: self.r0_norm_sq,
                b_norm: self.b_norm,
                records: self.records,
                termination,
                breakdown,
                final_res_norm_sq,
                final_iterate,
            },
        }
    }
}

/// Conjugate gradients for symmetric positive definite `A`.
pub fn cg_solve<O: LinearOperator + ?Sized>(
    a: &O,
    b: &[f64],
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    check_dims(a, &[b, x0])?;
    opts.validate()?;
    if let Some(dense) = a.as_dense() {
        let defect = dense.symmetry_defect();
        if defect > SYMMETRY_RTOL {
            return Err(SolverError::NotSymmetric { defect });
        }
    }

    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x);
    let mut p = r.clone();
    let mut ap = vec![0.0; a.dim()];
    let mut rr = dot(&r, &r);
    let mut tb = TraceBuilder::new(Method::Cg, b, &r, opts.record_iterates);
    if rr == 0.0 {
        return Ok(tb.finish(x, Termination::Converged, None, rr));
    }

    for k in 0..opts.max_iter {
        a.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        let pp = dot(&p, &p);
        if !(pap > BREAKDOWN_RTOL * pp.sqrt() * norm2(&ap)) {
            return Ok(tb.finish(
                x,
                Termination::Breakdown,
                Some(BreakdownKind::Curvature),
                rr,
            ));
        }
        let gamma = rr / pap;
        let snapshot = tb.snapshot(&x);
        axpy(gamma, &p, &mut x);
        axpy(-gamma, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        tb.records.push(IterationRecord {
            k,
            step_coeff: gamma,
            beta,
            res_norm_sq: rr,
            shadow_res_dot: None,
            mu_p: pap / pp,
            x_snapshot: snapshot,
        });
        if rr_next == 0.0 || opts.criterion.is_met(&tb.records, rr_next, tb.res_scale) {
            return Ok(tb.finish(x, Termination::Converged, None, rr_next));
        }
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }
    Ok(tb.finish(x, Termination::MaxIter, None, rr))
}

/// Bi-conjugate gradients. `shadow_r0` defaults to `r_0`.
pub fn bicg_solve<O: LinearOperator + ?Sized>(
    a: &O,
    b: &[f64],
    x0: &[f64],
    shadow_r0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    bicg_solve_observed(
        a,
        b,
        x0,
        shadow_r0,
        opts,
        ShadowDirectionRule::Standard,
        |_| {},
    )
}

/// [`bicg_solve`] with a choice of shadow-direction update and a per-step observer.
pub fn bicg_solve_observed<O, F>(
    a: &O,
    b: &[f64],
    x0: &[f64],
    shadow_r0: Option<&[f64]>,
    opts: &SolveOptions,
    rule: ShadowDirectionRule,
    mut observer: F,
) -> Result<Solution, SolverError>
where
    O: LinearOperator + ?Sized,
    F: FnMut(&BicgStep<'_>),
{
    check_dims(a, &[b, x0])?;
    if let Some(s) = shadow_r0 {
        check_dims(a, &[s])?;
    }
    opts.validate()?;

    let n = a.dim();
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x);
    let mut rt = shadow_r0.map_or_else(|| r.clone(), <[f64]>::to_vec);
    let mut p = r.clone();
    let mut pt = rt.clone();
    let mut ap = vec![0.0; n];
    let mut atpt = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut rho = dot(&rt, &r);
    let mut tb = TraceBuilder::new(Method::Bicg, b, &r, opts.record_iterates);
    if rr == 0.0 {
        return Ok(tb.finish(x, Termination::Converged, None, rr));
    }

    for k in 0..opts.max_iter {
        if !(rho.abs() > BREAKDOWN_RTOL * norm2(&rt) * rr.sqrt()) {
            return Ok(tb.finish(
                x,
                Termination::Breakdown,
                Some(BreakdownKind::ShadowResidual),
                rr,
            ));
        }
        a.apply_into(&p, &mut ap);
        let ptap = dot(&pt, &ap);
        if !(ptap.abs() > BREAKDOWN_RTOL * norm2(&pt) * norm2(&ap)) {
            return Ok(tb.finish(
                x,
                Termination::Breakdown,
                Some(BreakdownKind::Curvature),
                rr,
            ));
        }
        a.apply_transpose_into(&pt, &mut atpt);
        let alpha = rho / ptap;
        let pp = dot(&p, &p);
        let mu_p = dot(&p, &ap) / pp;

        let snapshot = tb.snapshot(&x);
        axpy(alpha, &p, &mut x);
        let rt_prev = (rule == ShadowDirectionRule::PreviousShadowResidual).then(|| rt.clone());
        axpy(-alpha, &ap, &mut r);
        axpy(-alpha, &atpt, &mut rt);
        let rr_next = dot(&r, &r);
        let rho_next = dot(&rt, &r);
        let beta = rho_next / rho;

        observer(&BicgStep {
            k,
            p: &p,
            p_shadow: &pt,
            r_next: &r,
            r_shadow_next: &rt,
        });

        tb.records.push(IterationRecord {
            k,
            step_coeff: alpha,
            beta,
            res_norm_sq: rr,
            shadow_res_dot: Some(rho),
            mu_p,
            x_snapshot: snapshot,
        });
        if rr_next == 0.0 || opts.criterion.is_met(&tb.records, rr_next, tb.res_scale) {
            return Ok(tb.finish(x, Termination::Converged, None, rr_next));
        }

        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        match rt_prev {
            None => {
                for (pi, ri) in pt.iter_mut().zip(&rt) {
                    *pi = ri + beta * *pi;
                }
            }
            Some(prev) => {
                for ((pi, ri), qi) in pt.iter_mut().zip(&rt).zip(&prev) {
                    *pi = ri + beta * qi;
                }
            }
        }
        rr = rr_next;
        rho = rho_next;
    }
    Ok(tb.finish(x, Termination::MaxIter, None, rr))
}

/// BiCGSTAB. The trace stores `α_k`, `‖r_k‖²` and `μ(p_k)` per step so the
/// same estimators apply; `beta` is `β_{k+1} = (ρ_{k+1}/ρ_k)(α_k/ω_k)`.
pub fn bicgstab_solve<O: LinearOperator + ?Sized>(
    a: &O,
    b: &[f64],
    x0: &[f64],
    shadow_r0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    check_dims(a, &[b, x0])?;
    if let Some(s) = shadow_r0 {
        check_dims(a, &[s])?;
    }
    opts.validate()?;

    let n = a.dim();
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x);
    let rhat = shadow_r0.map_or_else(|| r.clone(), <[f64]>::to_vec);
    let rhat_norm = norm2(&rhat);
    let mut p = r.clone();
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut rho = dot(&rhat, &r);
    let mut tb = TraceBuilder::new(Method::Bicgstab, b, &r, opts.record_iterates);
    if rr == 0.0 {
        return Ok(tb.finish(x, Termination::Converged, None, rr));
    }

    for k in 0..opts.max_iter {
        if !(rho.abs() > BREAKDOWN_RTOL * rhat_norm * rr.sqrt()) {
            return Ok(tb.finish(
                x,
                Termination::Breakdown,
                Some(BreakdownKind::ShadowResidual),
                rr,
            ));
        }
        a.apply_into(&p, &mut v);
        let rhat_v = dot(&rhat, &v);
        if !(rhat_v.abs() > BREAKDOWN_RTOL * rhat_norm * norm2(&v)) {
            return Ok(tb.finish(
                x,
                Termination::Breakdown,
                Some(BreakdownKind::Curvature),
                rr,
            ));
        }
        let alpha = rho / rhat_v;
        let pp = dot(&p, &p);
        let mu_p = dot(&p, &v) / pp;
        let snapshot = tb.snapshot(&x);

        for ((si, ri), vi) in s.iter_mut().zip(&r).zip(&v) {
            *si = ri - alpha * vi;
        }
        let ss = dot(&s, &s);
        if ss == 0.0 {
            axpy(alpha, &p, &mut x);
            tb.records.push(IterationRecord {
                k,
                step_coeff: alpha,
                beta: 0.0,
                res_norm_sq: rr,
                shadow_res_dot: Some(rho),
                mu_p,
                x_snapshot: snapshot,
            });
            return Ok(tb.finish(x, Termination::Converged, None, 0.0));
        }
        a.apply_into(&s, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Ok(tb.finish(
                x,
                Termination::Breakdown,
                Some(BreakdownKind::Stabilization),
                rr,
            ));
        }
        let omega = dot(&t, &s) / tt;
        axpy(alpha, &p, &mut x);
        axpy(omega, &s, &mut x);
        for ((ri, si), ti) in r.iter_mut().zip(&s).zip(&t) {
            *ri = si - omega * ti;
        }
        let rr_next = dot(&r, &r);
        let rho_next = dot(&rhat, &r);
        let beta = if omega != 0.0 {
            (rho_next / rho) * (alpha / omega)
        } else {
            f64::NAN
        };
        tb.records.push(IterationRecord {
            k,
            step_coeff: alpha,
            beta,
            res_norm_sq: rr,
            shadow_res_dot: Some(rho),
            mu_p,
            x_snapshot: snapshot,
        });
        if rr_next == 0.0 || opts.criterion.is_met(&tb.records, rr_next, tb.res_scale) {
            return Ok(tb.finish(x, Termination::Converged, None, rr_next));
        }
        if omega == 0.0 {
            return Ok(tb.finish(
                x,
                Termination::Breakdown,
                Some(BreakdownKind::Stabilization),
                rr_next,
            ));
        }
        for ((pi, ri), vi) in p.iter_mut().zip(&r).zip(&v) {
            *pi = ri + beta * (*pi - omega * vi);
        }
        rr = rr_next;
        rho = rho_next;
    }
    Ok(tb.finish(x, Termination::MaxIter, None, rr))
}

/// Dispatches on `method`; `shadow_r0` is ignored by CG.
pub fn solve<O: LinearOperator + ?Sized>(
    method: Method,
    a: &O,
    b: &[f64],
    x0: &[f64],
    shadow_r0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    match method {
        Method::Cg => cg_solve(a, b, x0, opts),
        Method::Bicg => bicg_solve(a, b, x0, shadow_r0, opts),
        Method::Bicgstab => bicgstab_solve(a, b, x0, shadow_r0, opts),
    }
}
