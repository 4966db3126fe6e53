//! Error-norm estimators driven by solver traces.
//!
//! # BiCGQL
//!
//! For CG and BiCG the squared A-norm of the error obeys
//! `‖ε_k‖_A² − ‖ε_{k+1}‖_A² = α_k ‖r_k‖²`, so summing `d + 1` consecutive
//! terms gives a delayed estimate of `‖ε_{k−d}‖_A²`:
//!
//! ```text
//! g_{k−d} = Σ_{j=k−d}^{k} α_j ‖r_j‖²
//! ```
//!
//! Combining this with the Hestenes–Stiefel relation
//! `‖ε_k‖_A² + ‖ε_{k+1}‖_A² = (‖ε_k‖² − ‖ε_{k+1}‖²) μ(p_k)` yields the l2
//! increments `φ_k ≈ ‖ε_k‖² − ‖ε_{k+1}‖²` and the delayed l2 estimate
//! `f_{k−d1−d2} = Σ_{j=k−d1−d2}^{k−d1} φ_j`. Both read only trace scalars
//! and never touch the operator.
//!
//! # CGQL
//!
//! For CG on HPD systems with known spectrum bounds `λ_m ≤ λ_min(A)`,
//! `λ_M ≥ λ_max(A)`, the Gauss, Gauss–Radau and Gauss–Lobatto rules on the
//! Jacobi matrix rebuilt from the CG coefficients bound `‖ε_{k−d}‖_A²`:
//! Gauss and Radau at `λ_M` from below, Radau at `λ_m` and Lobatto from above.
//!
//! # Golub–Meurant
//!
//! Cheap-looking but operator-hungry one-shot estimates from the residual
//! alone; two operator applications per call.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{dot, LinearOperator};
use crate::solvers::{IterationRecord, SolveTrace};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("estimate at step {k} needs a delay of {needed} steps")]
    InsufficientHistory { k: usize, needed: usize },
    #[error("step {k} is beyond the {len} recorded iterations")]
    OutOfRange { k: usize, len: usize },
    #[error("direction {index} has vanishing curvature; cannot form the l2 increment")]
    ZeroDirection { index: usize },
    #[error("spectrum bounds lie inside the spectrum of the Jacobi matrix at step {step}")]
    SpectrumViolation { step: usize },
    #[error("invalid spectrum bounds [{lo}, {hi}]")]
    InvalidSpectrum { lo: f64, hi: f64 },
    #[error("zero denominator in the Golub-Meurant estimate")]
    ZeroDenominator,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// How the l2 increment `φ_j` is formed from the A-norm estimate `g_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum L2Variant {
    /// `φ_j = (2 g_j − α_j‖r_j‖²) / μ(p_j)`; exact when `g_j` is exact.
    #[default]
    Consistent,
    /// `φ_j = 2 g_j / (μ(p_j) + α_j‖r_j‖²)`.
    PaperLiteral,
}

impl std::str::FromStr for L2Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "consistent" => Ok(L2Variant::Consistent),
            "paper" | "paper-literal" | "literal" => Ok(L2Variant::PaperLiteral),
            other => Err(format!("unknown l2 variant `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EstimateKind {
    BicgqlAnorm,
    BicgqlL2,
    CgqlGauss,
    CgqlRadauLower,
    CgqlRadauUpper,
    CgqlLobatto,
    GmAnorm,
    GmL2,
    Residual,
}

impl fmt::Display for EstimateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimateKind::BicgqlAnorm => "bicgql_anorm",
            EstimateKind::BicgqlL2 => "bicgql_l2",
            EstimateKind::CgqlGauss => "cgql_gauss",
            EstimateKind::CgqlRadauLower => "cgql_radau_lower",
            EstimateKind::CgqlRadauUpper => "cgql_radau_upper",
            EstimateKind::CgqlLobatto => "cgql_lobatto",
            EstimateKind::GmAnorm => "gm_anorm",
            EstimateKind::GmL2 => "gm_l2",
            EstimateKind::Residual => "residual",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundDirection {
    Lower,
    Upper,
    Heuristic,
}

impl BoundDirection {
    /// Guaranteed direction of `kind` on HPD systems; everything is
    /// heuristic for indefinite ones.
    pub fn for_kind(kind: EstimateKind, hpd: bool) -> Self {
        if !hpd {
            return BoundDirection::Heuristic;
        }
        match kind {
            EstimateKind::BicgqlAnorm | EstimateKind::CgqlGauss | EstimateKind::CgqlRadauLower => {
                BoundDirection::Lower
            }
            EstimateKind::CgqlRadauUpper | EstimateKind::CgqlLobatto => BoundDirection::Upper,
            _ => BoundDirection::Heuristic,
        }
    }
}

/// Estimates keyed by the iteration they refer to (`k − d`).
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSeries {
    pub kind: EstimateKind,
    pub d1: usize,
    pub d2: usize,
    pub bound_direction: BoundDirection,
    pub values: BTreeMap<usize, f64>,
}

impl EstimateSeries {
    pub fn new(kind: EstimateKind, d1: usize, d2: usize, hpd: bool) -> Self {
        Self {
            kind,
            d1,
            d2,
            bound_direction: BoundDirection::for_kind(kind, hpd),
            values: BTreeMap::new(),
        }
    }

    pub fn get(&self, k_target: usize) -> Option<f64> {
        self.values.get(&k_target).copied()
    }
}

/// Writes series as rows `k_target, kind, value, d1, d2, bound_direction`.
pub fn write_series_csv<W: std::io::Write>(w: W, series: &[EstimateSeries]) -> csv::Result<()> {
    #[derive(Serialize)]
    struct Row {
        k_target: usize,
        kind: String,
        value: f64,
        d1: usize,
        d2: usize,
        bound_direction: BoundDirection,
    }
    let mut wtr = csv::Writer::from_writer(w);
    for s in series {
        for (&k_target, &value) in &s.values {
            wtr.serialize(Row {
                k_target,
                kind: s.kind.to_string(),
                value,
                d1: s.d1,
                d2: s.d2,
                bound_direction: s.bound_direction,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn check_index(records: &[IterationRecord], k: usize, needed: usize) -> Result<()> {
    if k >= records.len() {
        return Err(EstimatorError::OutOfRange {
            k,
            len: records.len(),
        });
    }
    if k < needed {
        return Err(EstimatorError::InsufficientHistory { k, needed });
    }
    Ok(())
}

/// Signed `Σ_{j=k−d1}^{k} α_j ‖r_j‖²`.
pub fn anorm_partial_sum(records: &[IterationRecord], k: usize, d1: usize) -> Result<f64> {
    check_index(records, k, d1)?;
    Ok(records[k - d1..=k]
        .iter()
        .map(IterationRecord::energy_step)
        .sum())
}

/// BiCGQL estimate of `‖ε_{k−d1}‖_A²` (absolute value of the delayed sum).
pub fn bicgql_anorm(trace: &SolveTrace, k: usize, d1: usize) -> Result<f64> {
    anorm_partial_sum(&trace.records, k, d1).map(f64::abs)
}

/// One l2 increment `φ` from an A-norm value `g`, the step term
/// `α‖r‖²` and the curvature `μ(p)`.
pub fn l2_increment(g: f64, step_term: f64, mu: f64, variant: L2Variant) -> Option<f64> {
    let denom = match variant {
        L2Variant::Consistent => mu,
        L2Variant::PaperLiteral => mu + step_term,
    };
    if denom == 0.0 || !denom.is_finite() || denom.abs() < f64::MIN_POSITIVE {
        return None;
    }
    Some(match variant {
        L2Variant::Consistent => (2.0 * g - step_term) / denom,
        L2Variant::PaperLiteral => 2.0 * g / denom,
    })
}

/// `Σ_{j=k−d1−d2}^{k−d1} φ_j`, each `φ_j` built from the delay-`d1` A-norm estimate.
pub fn l2_partial_sum(
    records: &[IterationRecord],
    k: usize,
    d1: usize,
    d2: usize,
    variant: L2Variant,
) -> Result<f64> {
    check_index(records, k, d1 + d2)?;
    let mut total = 0.0;
    for j in (k - d1 - d2)..=(k - d1) {
        let g = anorm_partial_sum(records, j + d1, d1)?.abs();
        let rec = &records[j];
        total += l2_increment(g, rec.energy_step(), rec.mu_p, variant)
            .ok_or(EstimatorError::ZeroDirection { index: j })?;
    }
    Ok(total)
}

/// BiCGQL estimate of `‖ε_{k−d1−d2}‖²`. Signed; it is a plain heuristic on
/// indefinite systems, where callers usually take the absolute value.
pub fn bicgql_l2norm(
    trace: &SolveTrace,
    k: usize,
    d1: usize,
    d2: usize,
    variant: L2Variant,
) -> Result<f64> {
    l2_partial_sum(&trace.records, k, d1, d2, variant)
}

/// `‖r_k‖ / ‖b‖`, for `k` up to and including the final residual.
pub fn residual_criterion(trace: &SolveTrace, b_norm: f64, k: usize) -> Result<f64> {
    let rr = trace.res_norm_sq(k).ok_or(EstimatorError::OutOfRange {
        k,
        len: trace.len(),
    })?;
    Ok(rr.sqrt() / b_norm)
}

pub fn anorm_series(trace: &SolveTrace, d1: usize, hpd: bool) -> EstimateSeries {
    let mut s = EstimateSeries::new(EstimateKind::BicgqlAnorm, d1, 0, hpd);
    for k in d1..trace.len() {
        if let Ok(v) = bicgql_anorm(trace, k, d1) {
            s.values.insert(k - d1, v);
        }
    }
    s
}

pub fn l2_series(
    trace: &SolveTrace,
    d1: usize,
    d2: usize,
    variant: L2Variant,
    hpd: bool,
) -> EstimateSeries {
    let mut s = EstimateSeries::new(EstimateKind::BicgqlL2, d1, d2, hpd);
    for k in (d1 + d2)..trace.len() {
        if let Ok(v) = bicgql_l2norm(trace, k, d1, d2, variant) {
            s.values.insert(k - d1 - d2, v);
        }
    }
    s
}

pub fn residual_series(trace: &SolveTrace) -> EstimateSeries {
    let mut s = EstimateSeries::new(EstimateKind::Residual, 0, 0, false);
    for k in 0..=trace.len() {
        if let Ok(v) = residual_criterion(trace, trace.b_norm, k) {
            s.values.insert(k, v);
        }
    }
    s
}

/// `λ_m ≤ λ_min(A)` and `λ_M ≥ λ_max(A)` estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumBounds {
    lambda_min: f64,
    lambda_max: f64,
}

impl SpectrumBounds {
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max.is_finite()) {
            return Err(EstimatorError::InvalidSpectrum {
                lo: lambda_min,
                hi: lambda_max,
            });
        }
        Ok(Self {
            lambda_min,
            lambda_max,
        })
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
}

/// Quadrature estimates of `‖ε_{k−d}‖_A²` from one CG trace prefix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureBounds {
    pub gauss: f64,
    pub radau_lower: f64,
    pub radau_upper: f64,
    pub lobatto: f64,
}

/// Pivots of `T_m − λI` must keep their sign; allow rounding noise.
const PIVOT_RTOL: f64 = 1e-10;

/// Relative outward shift of the quadrature nodes, in units of `λ_M`.
pub const NODE_MARGIN: f64 = 1e-9;

/// Running CGQL state: Radau pivots of `T_m − λ_m I` and `T_m − λ_M I`
/// updated one CG step at a time.
#[derive(Clone, Debug)]
pub struct CgqlRecurrence {
    spectrum: SpectrumBounds,
    m: usize,
    /// `δ_m(λ_m)`, `δ_m(λ_M)`
    pivot_lo: f64,
    pivot_hi: f64,
    prev_gamma: f64,
    prev_beta: f64,
}

/// Quadrature correction terms for the newest step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureTail {
    /// Radau at `λ_M` (lower bound).
    pub radau_lower: f64,
    /// Radau at `λ_m` (upper bound).
    pub radau_upper: f64,
    pub lobatto: f64,
}

/// `(T̂⁻¹)₁,₁ − (T_m⁻¹)₁,₁` scaled by `‖r_0‖²`, for `T̂` the extension of
/// `T_m` by a last row `(η², ω)`; `c2 = ‖r_0‖² c_m²`, `pivot = δ_m`.
fn extension_term(c2: f64, pivot: f64, omega: f64, eta2: f64) -> Option<f64> {
    let denom = pivot * (omega * pivot - eta2);
    if !(denom > 0.0) || !denom.is_finite() {
        return None;
    }
    Some(c2 * eta2 / denom)
}

impl CgqlRecurrence {
    pub fn new(spectrum: SpectrumBounds) -> Self {
        Self {
            spectrum,
            m: 0,
            pivot_lo: 0.0,
            pivot_hi: 0.0,
            prev_gamma: 1.0,
            prev_beta: 0.0,
        }
    }

    /// Quadrature nodes: the spectrum bounds pushed outward by
    /// [`NODE_MARGIN`] so Ritz values that converge onto an exact bound
    /// (and overshoot it by rounding) keep the pivots sign-definite.
    pub fn nodes(&self) -> (f64, f64) {
        let (lo, hi) = (self.spectrum.lambda_min, self.spectrum.lambda_max);
        (
            (lo - NODE_MARGIN * hi).max(0.5 * lo),
            hi * (1.0 + NODE_MARGIN),
        )
    }

    /// Feeds CG record `k = m` (0-based), extending `T_m` to `T_{m+1}`, and
    /// returns the Radau/Lobatto corrections for `T_{m+1}`.
    pub fn push(&mut self, rec: &IterationRecord) -> Result<QuadratureTail> {
        let step = self.m;
        let (lo, hi) = self.nodes();
        let gamma = rec.step_coeff;
        // α_{m+1} and η_m² in 1-based Lanczos indexing
        let alpha = 1.0 / gamma + self.prev_beta / self.prev_gamma;
        let eta2_prev = self.prev_beta / (self.prev_gamma * self.prev_gamma);
        // size of the terms cancelling in each pivot, for the sign test
        let (mut scale_lo, mut scale_hi) = (alpha.abs() + lo, alpha.abs() + hi);
        if step == 0 {
            self.pivot_lo = alpha - lo;
            self.pivot_hi = alpha - hi;
        } else {
            let (c_lo, c_hi) = (eta2_prev / self.pivot_lo, eta2_prev / self.pivot_hi);
            scale_lo += c_lo.abs();
            scale_hi += c_hi.abs();
            self.pivot_lo = alpha - lo - c_lo;
            self.pivot_hi = alpha - hi - c_hi;
        }
        self.m += 1;
        self.prev_gamma = gamma;
        self.prev_beta = rec.beta;

        if self.pivot_lo < -PIVOT_RTOL * scale_lo || self.pivot_hi > PIVOT_RTOL * scale_hi {
            return Err(EstimatorError::SpectrumViolation { step });
        }

        // Measure exhausted: all rules coincide with Gauss.
        if rec.beta <= f64::EPSILON * f64::EPSILON {
            return Ok(QuadratureTail {
                radau_lower: 0.0,
                radau_upper: 0.0,
                lobatto: 0.0,
            });
        }

        let eta2 = rec.beta / (gamma * gamma);
        let pivot = 1.0 / gamma;
        let c2 = rec.res_norm_sq;
        let violation = EstimatorError::SpectrumViolation { step };

        let omega_lo = lo + eta2 / self.pivot_lo;
        let omega_hi = hi + eta2 / self.pivot_hi;
        let radau_upper = extension_term(c2, pivot, omega_lo, eta2).ok_or(violation.clone())?;
        let radau_lower = extension_term(c2, pivot, omega_hi, eta2).ok_or(violation.clone())?;

        // Lobatto: choose (ω, η²) so that both λ_m and λ_M are eigenvalues.
        let lobatto_eta2 =
            (hi - lo) * self.pivot_lo * self.pivot_hi / (self.pivot_hi - self.pivot_lo);
        let lobatto_omega = lo + lobatto_eta2 / self.pivot_lo;
        let lobatto = if lobatto_eta2 == 0.0 {
            0.0
        } else {
            extension_term(c2, pivot, lobatto_omega, lobatto_eta2).ok_or(violation)?
        };

        Ok(QuadratureTail {
            radau_lower,
            radau_upper,
            lobatto,
        })
    }
}

/// CGQL estimates of `‖ε_{k−d}‖_A²` from the first `k + 1` CG records.
pub fn cgql_bounds(
    trace: &SolveTrace,
    spectrum: SpectrumBounds,
    k: usize,
    d: usize,
) -> Result<QuadratureBounds> {
    check_index(&trace.records, k, d)?;
    let mut rec = CgqlRecurrence::new(spectrum);
    let mut tail = None;
    for r in &trace.records[..=k] {
        tail = Some(rec.push(r)?);
    }
    let tail = tail.expect("k < len so at least one record");
    let gauss = anorm_partial_sum(&trace.records, k, d)?;
    Ok(QuadratureBounds {
        gauss,
        radau_lower: gauss + tail.radau_lower,
        radau_upper: gauss + tail.radau_upper,
        lobatto: gauss + tail.lobatto,
    })
}

/// All CGQL estimates with delay `d`, keyed by target iteration. Stops at the
/// first spectrum violation.
pub fn cgql_series(
    trace: &SolveTrace,
    spectrum: SpectrumBounds,
    d: usize,
) -> (BTreeMap<usize, QuadratureBounds>, Option<EstimatorError>) {
    let mut out = BTreeMap::new();
    let mut rec = CgqlRecurrence::new(spectrum);
    for (k, r) in trace.records.iter().enumerate() {
        let tail = match rec.push(r) {
            Ok(t) => t,
            Err(e) => return (out, Some(e)),
        };
        if k >= d {
            let gauss: f64 = trace.records[k - d..=k]
                .iter()
                .map(IterationRecord::energy_step)
                .sum();
            out.insert(
                k - d,
                QuadratureBounds {
                    gauss,
                    radau_lower: gauss + tail.radau_lower,
                    radau_upper: gauss + tail.radau_upper,
                    lobatto: gauss + tail.lobatto,
                },
            );
        }
    }
    (out, None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GolubMeurant {
    /// `(r, Ar)² / (A²r, Ar)`
    pub anorm_est: f64,
    /// `(r, r)² / (Ar, Ar)`
    pub l2_est: f64,
}

/// Residual-only estimates of `‖ε‖_A²` and `‖ε‖²`; applies `A` twice.
pub fn golub_meurant<O: LinearOperator + ?Sized>(a: &O, r: &[f64]) -> Result<GolubMeurant> {
    if r.len() != a.dim() {
        return Err(EstimatorError::DimensionMismatch {
            expected: a.dim(),
            found: r.len(),
        });
    }
    let ar = a.apply(r);
    let a2r = a.apply(&ar);
    let r_ar = dot(r, &ar);
    let ar_ar = dot(&ar, &ar);
    let a2r_ar = dot(&a2r, &ar);
    if ar_ar == 0.0 || a2r_ar == 0.0 {
        return Err(EstimatorError::ZeroDenominator);
    }
    let rr = dot(r, r);
    Ok(GolubMeurant {
        anorm_est: r_ar * r_ar / a2r_ar,
        l2_est: rr * rr / ar_ar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{direct_solve, sub, DenseOperator};
    use crate::solvers::{cg_solve, SolveOptions, StoppingCriterion};

    fn diag12() -> (DenseOperator, SolveTrace) {
        let a = DenseOperator::from_diagonal(&[1.0, 2.0]);
        let o = SolveOptions::new(10, StoppingCriterion::residual(1e-15)).with_iterates();
        let t = cg_solve(&a, &[1.0, 1.0], &[0.0, 0.0], &o).unwrap().trace;
        (a, t)
    }

    /// (‖ε_k‖_A², ‖ε_k‖²) for every iterate, from the direct solver.
    fn true_errors(a: &DenseOperator, b: &[f64], t: &SolveTrace) -> Vec<(f64, f64)> {
        let x = direct_solve(a, b).unwrap();
        t.iterates()
            .unwrap()
            .iter()
            .map(|xk| {
                let e = sub(&x, xk);
                (dot(&e, &a.apply(&e)), dot(&e, &e))
            })
            .collect()
    }

    #[test]
    fn anorm_on_diag12() {
        let (a, t) = diag12();
        let errs = true_errors(&a, &[1.0, 1.0], &t);
        assert!((errs[0].0 - 1.5).abs() < 1e-15);
        assert!((errs[1].0 - 1.0 / 6.0).abs() < 1e-15);
        let g0 = bicgql_anorm(&t, 0, 0).unwrap();
        assert!((g0 - 4.0 / 3.0).abs() < 1e-15);
        assert!((errs[0].0 - g0 - errs[1].0).abs() < 1e-15);
        let g0_delayed = bicgql_anorm(&t, 1, 1).unwrap();
        assert!((g0_delayed - 1.5).abs() < 1e-15);
    }

    #[test]
    fn anorm_guards() {
        let (_, t) = diag12();
        assert_eq!(
            bicgql_anorm(&t, 0, 1),
            Err(EstimatorError::InsufficientHistory { k: 0, needed: 1 })
        );
        assert!(matches!(
            bicgql_anorm(&t, 5, 0),
            Err(EstimatorError::OutOfRange { .. })
        ));
    }

    #[test]
    fn l2_variants_on_diag12() {
        let (a, t) = diag12();
        let errs = true_errors(&a, &[1.0, 1.0], &t);
        let rec = &t.records[0];
        let exact_g = errs[0].0;
        let consistent =
            l2_increment(exact_g, rec.energy_step(), rec.mu_p, L2Variant::Consistent).unwrap();
        assert!((consistent - 10.0 / 9.0).abs() < 1e-14);
        assert!((consistent - (errs[0].1 - errs[1].1)).abs() < 1e-14);
        let literal = l2_increment(
            exact_g,
            rec.energy_step(),
            rec.mu_p,
            L2Variant::PaperLiteral,
        )
        .unwrap();
        assert!((literal - 18.0 / 17.0).abs() < 1e-14);
        assert!((literal - 10.0 / 9.0).abs() > 0.05);
    }

    #[test]
    fn l2_estimate_exact_by_finite_termination() {
        let (a, t) = diag12();
        let errs = true_errors(&a, &[1.0, 1.0], &t);
        // g_0 with d1 = 1 is exact, so φ_0 is exact
        let f = bicgql_l2norm(&t, 1, 1, 0, L2Variant::Consistent).unwrap();
        assert!((f - (errs[0].1 - errs[1].1)).abs() < 1e-14);
        // with exact A-norm inputs the increments telescope to ‖ε_0‖²
        let phi: f64 = (0..2)
            .map(|j| {
                let r = &t.records[j];
                l2_increment(errs[j].0, r.energy_step(), r.mu_p, L2Variant::Consistent).unwrap()
            })
            .sum();
        assert!((phi - errs[0].1).abs() < 1e-14, "{phi} vs {}", errs[0].1);
        // the last A-norm estimate is exact at termination even with d1 = 0
        let g1 = bicgql_anorm(&t, 1, 0).unwrap();
        assert!((g1 - errs[1].0).abs() < 1e-14);
    }

    #[test]
    fn l2_guard_cases() {
        let (_, t) = diag12();
        assert_eq!(
            bicgql_l2norm(&t, 1, 1, 1, L2Variant::Consistent),
            Err(EstimatorError::InsufficientHistory { k: 1, needed: 2 })
        );
        assert!(l2_increment(1.0, 0.5, 0.0, L2Variant::Consistent).is_none());
        assert!(l2_increment(1.0, 0.0, 0.0, L2Variant::PaperLiteral).is_none());
    }

    #[test]
    fn residual_criterion_values() {
        let (_, t) = diag12();
        let v = residual_criterion(&t, 2f64.sqrt(), 1).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            residual_criterion(&t, 1.0, 2).unwrap(),
            t.final_res_norm_sq.sqrt()
        );
        assert!(residual_criterion(&t, 1.0, 3).is_err());
    }

    #[test]
    fn zero_residual_gives_zero() {
        let a = DenseOperator::identity(2);
        let o = SolveOptions::new(3, StoppingCriterion::residual(1e-12));
        let t = cg_solve(&a, &[1.0, 0.0], &[0.0, 0.0], &o).unwrap().trace;
        assert_eq!(residual_criterion(&t, 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn cgql_collapses_at_termination() {
        let (a, t) = diag12();
        let errs = true_errors(&a, &[1.0, 1.0], &t);
        let spec = SpectrumBounds::new(1.0, 2.0).unwrap();
        for (k, d) in [(1usize, 1usize), (1, 0)] {
            let q = cgql_bounds(&t, spec, k, d).unwrap();
            let truth = errs[k - d].0;
            for v in [q.gauss, q.radau_lower, q.radau_upper, q.lobatto] {
                assert!((v - truth).abs() < 1e-12, "k={k} d={d}: {v} vs {truth}");
            }
        }
    }

    #[test]
    fn cgql_first_step_ordering_on_diag12() {
        let (a, t) = diag12();
        let errs = true_errors(&a, &[1.0, 1.0], &t);
        let spec = SpectrumBounds::new(1.0, 2.0).unwrap();
        let q = cgql_bounds(&t, spec, 0, 0).unwrap();
        let truth = errs[0].0;
        assert!(q.gauss <= truth && q.radau_lower <= truth);
        assert!(q.radau_upper >= truth - 1e-14 && q.lobatto >= truth - 1e-14);
        // two-point measure: every one-node-extended rule is exact here, up
        // to the node margin
        assert!((q.radau_upper - truth).abs() < 1e-8);
        assert!((q.radau_lower - truth).abs() < 1e-8);
    }

    #[test]
    fn cgql_extension_matches_dense_oracle() {
        // Extend T_1 by the Radau row and compare with an explicit inverse.
        let (_, t) = diag12();
        let spec = SpectrumBounds::new(0.5, 3.0).unwrap();
        let (lo, _) = CgqlRecurrence::new(spec).nodes();
        let q = cgql_bounds(&t, spec, 0, 0).unwrap();
        let g0 = t.records[0].step_coeff;
        let eta2 = t.records[0].beta / (g0 * g0);
        let alpha1 = 1.0 / g0;
        let omega = lo + eta2 / (alpha1 - lo);
        let m = DenseOperator::from_rows(&[vec![alpha1, eta2.sqrt()], vec![eta2.sqrt(), omega]])
            .unwrap();
        let inv11 = direct_solve(&m, &[1.0, 0.0]).unwrap()[0];
        let expected = t.r0_norm_sq * inv11;
        assert!((q.radau_upper - expected).abs() < 1e-13 * expected);
    }

    #[test]
    fn cgql_rejects_spectrum_inside() {
        let a = DenseOperator::from_diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let o = SolveOptions::new(10, StoppingCriterion::residual(1e-15));
        let t = cg_solve(&a, &[1.0; 4], &[0.0; 4], &o).unwrap().trace;
        let spec = SpectrumBounds::new(2.6, 2.7).unwrap();
        assert!(matches!(
            cgql_bounds(&t, spec, 2, 0),
            Err(EstimatorError::SpectrumViolation { .. })
        ));
        assert!(SpectrumBounds::new(0.0, 1.0).is_err());
        assert!(SpectrumBounds::new(2.0, 1.0).is_err());
    }

    #[test]
    fn gauss_matches_bicgql() {
        let (_, t) = diag12();
        let spec = SpectrumBounds::new(1.0, 2.0).unwrap();
        let q = cgql_bounds(&t, spec, 1, 1).unwrap();
        assert_eq!(q.gauss, bicgql_anorm(&t, 1, 1).unwrap());
    }

    #[test]
    fn golub_meurant_cases() {
        let i = DenseOperator::identity(3);
        let r = [1.0, -2.0, 0.5];
        let gm = golub_meurant(&i, &r).unwrap();
        let rr = dot(&r, &r);
        assert!((gm.anorm_est - rr).abs() < 1e-14);
        assert!((gm.l2_est - rr).abs() < 1e-14);

        let d = DenseOperator::from_diagonal(&[2.0, 4.0]);
        let gm = golub_meurant(&d, &[1.0, 1.0]).unwrap();
        assert!((gm.l2_est - 0.2).abs() < 1e-15);
        let x = direct_solve(&d, &[1.0, 1.0]).unwrap();
        assert!((dot(&x, &x) - 0.3125).abs() < 1e-15);

        let z = DenseOperator::new(2, vec![0.0; 4]).unwrap();
        assert_eq!(
            golub_meurant(&z, &[1.0, 0.0]),
            Err(EstimatorError::ZeroDenominator)
        );
    }

    #[test]
    fn series_keys_and_csv() {
        let (_, t) = diag12();
        let s = anorm_series(&t, 1, true);
        assert_eq!(s.values.keys().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(s.bound_direction, BoundDirection::Lower);
        let l = l2_series(&t, 0, 1, L2Variant::Consistent, false);
        assert_eq!(l.bound_direction, BoundDirection::Heuristic);
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &[s, l]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k_target,kind,value,d1,d2,bound_direction\n"));
        assert!(text.contains("bicgql_anorm"));
    }
}
