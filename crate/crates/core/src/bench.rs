//! Condition-number-binned accuracy experiments.
//!
//! Each bin draws `matrices_per_bin` matrices with κ log-uniform in
//! `[kappa_lo, kappa_hi]`, pairs each with `rhs_per_matrix` canonical
//! right-hand sides, solves from `x_0 = 0` and scores the estimators against
//! the direct-solve error at every iteration whose true error norms are
//! still above `1e2·ε` times their initial values.
//!
//! All four metrics are ratios `estimator error / reference error`, so values
//! below 1 mean the estimator beats the reference:
//!
//! | metric              | estimator          | reference                  |
//! |---------------------|--------------------|----------------------------|
//! | `anorm_vs_residual` | `√g_k` vs `‖e_k‖_A` | `‖r_k‖/‖b‖` vs `‖e_k‖/‖x‖` |
//! | `l2_vs_residual`    | `√f_k` vs `‖e_k‖`   | `‖r_k‖/‖b‖` vs `‖e_k‖/‖x‖` |
//! | `anorm_vs_gm`       | `√g_k`              | Golub–Meurant A-norm       |
//! | `l2_vs_gm`          | `√f_k`              | Golub–Meurant l2           |
//!
//! Cases run in parallel; results are collected and aggregated in case
//! order, so reports do not depend on scheduling.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimators::{
    anorm_partial_sum, golub_meurant, l2_increment, EstimateKind, EstimateSeries, L2Variant,
};
use crate::linalg::{dot, norm2, sub, DenseOperator, LinalgError, LinearOperator, LuFactorization};
use crate::matgen::{gen_matrix, gen_rhs_suite, GenSpec, MatrixClass};
use crate::solvers::{solve, Method, SolveOptions, SolveTrace, StoppingCriterion, Termination};

/// Residual tolerance the benchmark solves to.
pub const BENCH_TOL: f64 = 1e-14;
/// Shadow-vector retries after a breakdown.
pub const MAX_RETRIES: usize = 3;
/// Iterations count while true errors exceed this multiple of `ε·initial`.
const VALID_FACTOR: f64 = 1e2;
/// Relative errors at or below this are treated as exact.
const EXACT_RTOL: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bin: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// The reference error in a metric vanishes, so the ratio is undefined.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("degenerate case: reference error underflows")]
pub struct DegenerateCase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Metric {
    AnormVsResidual,
    L2VsResidual,
    AnormVsGm,
    L2VsGm,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::AnormVsResidual,
        Metric::L2VsResidual,
        Metric::AnormVsGm,
        Metric::L2VsGm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AnormVsResidual => "anorm_vs_residual",
            Metric::L2VsResidual => "l2_vs_residual",
            Metric::AnormVsGm => "anorm_vs_gm",
            Metric::L2VsGm => "l2_vs_gm",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn ratio(num: f64, den: f64) -> Result<f64, DegenerateCase> {
    if num <= EXACT_RTOL {
        return Ok(0.0);
    }
    if !(den > f64::EPSILON) || !den.is_finite() || !num.is_finite() {
        return Err(DegenerateCase);
    }
    Ok(num / den)
}

/// Relative error of `g` as an A-norm estimate over the relative error of
/// `‖r‖/‖b‖` as an estimate of `‖e‖/‖x‖`. All arguments are norms, not squares.
pub fn metric_anorm_vs_residual(
    g: f64,
    true_ea: f64,
    r_norm: f64,
    b_norm: f64,
    true_e2: f64,
    x_norm: f64,
) -> Result<f64, DegenerateCase> {
    let rel_e = true_e2 / x_norm;
    let num = ((g - true_ea) / true_ea).abs();
    let den = ((r_norm / b_norm - rel_e) / rel_e).abs();
    ratio(num, den)
}

/// `|(f − ‖e‖)/‖x‖| / |‖r‖/‖b‖ − ‖e‖/‖x‖|`.
pub fn metric_l2_vs_residual(
    f: f64,
    true_e2: f64,
    r_norm: f64,
    b_norm: f64,
    x_norm: f64,
) -> Result<f64, DegenerateCase> {
    let rel_e = true_e2 / x_norm;
    let num = (f / x_norm - rel_e).abs();
    let den = (r_norm / b_norm - rel_e).abs();
    ratio(num, den)
}

/// `|est − true| / |gm − true|`; any common normalisation cancels.
pub fn metric_vs_gm(est: f64, gm_est: f64, true_norm: f64) -> Result<f64, DegenerateCase> {
    let num = ((est - true_norm) / true_norm).abs();
    let den = ((gm_est - true_norm) / true_norm).abs();
    ratio(num, den)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinSpec {
    pub kappa_lo: f64,
    pub kappa_hi: f64,
    pub matrices_per_bin: usize,
    pub rhs_per_matrix: usize,
    pub dim: usize,
    pub klass: MatrixClass,
    pub method: Method,
    pub d1: usize,
    pub d2: usize,
    /// Delay used for the estimates compared against Golub–Meurant.
    pub gm_delay: usize,
    pub l2_variant: L2Variant,
    pub max_iter: usize,
    pub seed: u64,
}

impl BinSpec {
    /// Desk-scale defaults: 10 matrices × 10 right-hand sides, `n = 100`,
    /// BiCG, `d1 = d2 = 4`.
    pub fn new(kappa_lo: f64, kappa_hi: f64, klass: MatrixClass, seed: u64) -> Self {
        Self {
            kappa_lo,
            kappa_hi,
            matrices_per_bin: 10,
            rhs_per_matrix: 10,
            dim: 100,
            klass,
            method: Method::Bicg,
            d1: 4,
            d2: 4,
            gm_delay: 0,
            l2_variant: L2Variant::Consistent,
            max_iter: 400,
            seed,
        }
    }

    /// `lo == hi` is allowed so a bin can pin κ exactly (e.g. κ = 1).
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidSpec(m));
        if !(self.kappa_lo >= 1.0 && self.kappa_lo <= self.kappa_hi && self.kappa_hi.is_finite()) {
            return bad(format!(
                "kappa range [{}, {}]",
                self.kappa_lo, self.kappa_hi
            ));
        }
        if self.matrices_per_bin == 0 || self.rhs_per_matrix == 0 || self.max_iter == 0 {
            return bad("counts must be at least 1".into());
        }
        if self.dim < 2 || self.rhs_per_matrix > self.dim {
            return bad(format!(
                "dim {} with {} right-hand sides",
                self.dim, self.rhs_per_matrix
            ));
        }
        Ok(())
    }

    pub fn cases(&self) -> usize {
        self.matrices_per_bin * self.rhs_per_matrix
    }
}

/// Six decade bins `[10^i, 10^{i+1}]`, `i = 0..6`.
pub fn decade_bins(klass: MatrixClass, seed: u64) -> Vec<BinSpec> {
    (0..6)
        .map(|i| {
            BinSpec::new(
                10f64.powi(i),
                10f64.powi(i + 1),
                klass,
                mix_seed(&[seed, i as u64]),
            )
        })
        .collect()
}

/// SplitMix64 fold, used to derive independent per-case seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: Metric,
    /// Per-case means, in case order; `None` for excluded cases.
    pub per_case: Vec<Option<f64>>,
    pub mean: f64,
    pub median: f64,
    pub geomean: f64,
    pub n_cases: usize,
    /// Cases with no usable iteration for this metric.
    pub n_degenerate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinReport {
    pub bin_id: usize,
    pub kappa_lo: f64,
    pub kappa_hi: f64,
    /// Geometric mean of the κ actually drawn for the bin's matrices.
    pub kappa_geomean: f64,
    pub n_attempted: usize,
    pub n_breakdowns: usize,
    pub n_retries: usize,
    pub metrics: Vec<MetricSummary>,
}

impl BinReport {
    pub fn metric(&self, m: Metric) -> &MetricSummary {
        &self.metrics[m.index()]
    }
}

/// Outcome of one (matrix, rhs) case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub per_metric: [Option<f64>; 4],
    pub breakdown: bool,
    pub retries: usize,
    pub iterations: usize,
}

/// `‖ε‖_A²` (as `|εᵀAε|`) and `‖ε‖²` for each recorded iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleErrors {
    pub anorm_sq: Vec<f64>,
    pub l2_sq: Vec<f64>,
}

impl OracleErrors {
    /// Needs a trace recorded with iterates.
    pub fn from_trace<O: LinearOperator + ?Sized>(
        a: &O,
        x_true: &[f64],
        trace: &SolveTrace,
    ) -> Option<Self> {
        let its = trace.iterates()?;
        let mut anorm_sq = Vec::with_capacity(its.len());
        let mut l2_sq = Vec::with_capacity(its.len());
        for xk in its {
            let e = sub(x_true, xk);
            anorm_sq.push(dot(&e, &a.apply(&e)).abs());
            l2_sq.push(dot(&e, &e));
        }
        Some(Self { anorm_sq, l2_sq })
    }
}

/// Delayed A-norm estimate of `‖ε_k‖_A²`, truncating the window at the end
/// of a converged trace (missing terms are zero once the residual is).
fn delayed_anorm(trace: &SolveTrace, k: usize, d1: usize, converged: bool) -> Option<f64> {
    let last = trace.len().checked_sub(1)?;
    let end = k + d1;
    if end > last && !converged {
        return None;
    }
    let end = end.min(last);
    anorm_partial_sum(&trace.records, end, end - k)
        .ok()
        .map(f64::abs)
}

fn delayed_l2(
    trace: &SolveTrace,
    k: usize,
    d1: usize,
    d2: usize,
    variant: L2Variant,
    converged: bool,
) -> Option<f64> {
    let last = trace.len().checked_sub(1)?;
    if k + d1 + d2 > last && !converged {
        return None;
    }
    let mut total = 0.0;
    for j in k..=(k + d2).min(last) {
        let g = delayed_anorm(trace, j, d1, converged)?;
        let rec = &trace.records[j];
        total += l2_increment(g, rec.energy_step(), rec.mu_p, variant)?;
    }
    Some(total.abs())
}

struct Running {
    sum: f64,
    n: usize,
}

impl Running {
    fn push(&mut self, v: Result<f64, DegenerateCase>) {
        if let Ok(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Scores one solve against the oracle; `None` entries mean the case had no
/// usable iteration for that metric.
// k indexes the records, the oracle errors and the iterates in lockstep
#[allow(clippy::needless_range_loop)]
pub fn score_trace(
    a: &DenseOperator,
    b: &[f64],
    x_true: &[f64],
    trace: &SolveTrace,
    spec: &BinSpec,
) -> [Option<f64>; 4] {
    let Some(oracle) = OracleErrors::from_trace(a, x_true, trace) else {
        return [None; 4];
    };
    let converged = trace.termination == Termination::Converged;
    let b_norm = norm2(b);
    let x_norm = norm2(x_true);
    let ea0 = oracle.anorm_sq[0].sqrt();
    let e20 = oracle.l2_sq[0].sqrt();
    let floor = VALID_FACTOR * f64::EPSILON;
    let iterates = trace.iterates().expect("oracle built from iterates");
    let mut acc: Vec<Running> = (0..4).map(|_| Running { sum: 0.0, n: 0 }).collect();

    for k in 0..trace.len() {
        let ea = oracle.anorm_sq[k].sqrt();
        let e2 = oracle.l2_sq[k].sqrt();
        if !(ea > floor * ea0 && e2 > floor * e20) {
            continue;
        }
        let r_norm = trace.records[k].res_norm_sq.sqrt();

        if let Some(g) = delayed_anorm(trace, k, spec.d1, converged) {
            acc[0].push(metric_anorm_vs_residual(
                g.sqrt(),
                ea,
                r_norm,
                b_norm,
                e2,
                x_norm,
            ));
        }
        if let Some(f) = delayed_l2(trace, k, spec.d1, spec.d2, spec.l2_variant, converged) {
            acc[1].push(metric_l2_vs_residual(f.sqrt(), e2, r_norm, b_norm, x_norm));
        }

        let d = spec.gm_delay;
        let g = delayed_anorm(trace, k, d, converged);
        let f = delayed_l2(trace, k, d, d, spec.l2_variant, converged);
        if g.is_none() && f.is_none() {
            continue;
        }
        let ax = a.apply(iterates[k]);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let Ok(gm) = golub_meurant(a, &r) else {
            continue;
        };
        if let Some(g) = g {
            acc[2].push(metric_vs_gm(g.sqrt(), gm.anorm_est.abs().sqrt(), ea));
        }
        if let Some(f) = f {
            acc[3].push(metric_vs_gm(f.sqrt(), gm.l2_est.sqrt(), e2));
        }
    }
    [acc[0].mean(), acc[1].mean(), acc[2].mean(), acc[3].mean()]
}

fn solve_case(
    a: &DenseOperator,
    b: &[f64],
    x_true: &[f64],
    spec: &BinSpec,
    case_seed: u64,
) -> CaseResult {
    let n = a.dim();
    let x0 = vec![0.0; n];
    let opts =
        SolveOptions::new(spec.max_iter, StoppingCriterion::residual(BENCH_TOL)).with_iterates();
    let mut shadow: Option<Vec<f64>> = None;
    for attempt in 0..=MAX_RETRIES {
        // CG takes no shadow vector, so a breakdown there is final
        let Ok(sol) = solve(spec.method, a, b, &x0, shadow.as_deref(), &opts) else {
            return CaseResult {
                per_metric: [None; 4],
                breakdown: true,
                retries: attempt,
                iterations: 0,
            };
        };
        if sol.trace.termination != Termination::Breakdown {
            return CaseResult {
                per_metric: score_trace(a, b, x_true, &sol.trace, spec),
                breakdown: false,
                retries: attempt,
                iterations: sol.trace.len(),
            };
        }
        if spec.method == Method::Cg {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[case_seed, attempt as u64]));
        shadow = Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    CaseResult {
        per_metric: [None; 4],
        breakdown: true,
        retries: if spec.method == Method::Cg {
            0
        } else {
            MAX_RETRIES
        },
        iterations: 0,
    }
}

/// κ for matrix `m` of a bin, log-uniform in `[lo, hi]`.
pub fn draw_kappa(spec: &BinSpec, m: usize) -> f64 {
    if spec.kappa_lo == spec.kappa_hi {
        return spec.kappa_lo;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, m as u64, 0x6b]));
    let (l, h) = (spec.kappa_lo.ln(), spec.kappa_hi.ln());
    rng.random_range(l..=h)
        .exp()
        .clamp(spec.kappa_lo, spec.kappa_hi)
}

struct MatrixCase {
    kappa: f64,
    a: DenseOperator,
    rhs: Vec<Vec<f64>>,
    x_true: Vec<Vec<f64>>,
}

fn prepare_matrix(spec: &BinSpec, m: usize) -> Result<MatrixCase, BenchError> {
    let kappa = draw_kappa(spec, m);
    let gspec = GenSpec::new(
        spec.dim,
        kappa,
        spec.klass,
        mix_seed(&[spec.seed, m as u64]),
    )
    .map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
    let a = gen_matrix(&gspec);
    let rhs = gen_rhs_suite(
        spec.dim,
        spec.rhs_per_matrix,
        mix_seed(&[spec.seed, m as u64, 1]),
    )
    .map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
    let lu = LuFactorization::new(&a)?;
    let x_true = rhs.iter().map(|b| lu.solve(b)).collect::<Result<_, _>>()?;
    Ok(MatrixCase {
        kappa,
        a,
        rhs,
        x_true,
    })
}

fn summarize(metric: Metric, per_case: Vec<Option<f64>>, breakdowns: &[bool]) -> MetricSummary {
    let mut vals: Vec<f64> = per_case.iter().flatten().copied().collect();
    let n_cases = vals.len();
    let n_degenerate = per_case
        .iter()
        .zip(breakdowns)
        .filter(|(v, &bd)| v.is_none() && !bd)
        .count();
    let (mean, median, geomean) = if n_cases == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mean = vals.iter().sum::<f64>() / n_cases as f64;
        let geomean = (vals.iter().map(|v| v.ln()).sum::<f64>() / n_cases as f64).exp();
        vals.sort_by(f64::total_cmp);
        let median = if n_cases % 2 == 1 {
            vals[n_cases / 2]
        } else {
            0.5 * (vals[n_cases / 2 - 1] + vals[n_cases / 2])
        };
        (mean, median, geomean)
    };
    MetricSummary {
        metric,
        per_case,
        mean,
        median,
        geomean,
        n_cases,
        n_degenerate,
    }
}

/// Aggregates case results (in case order) into a report.
pub fn aggregate(bin_id: usize, spec: &BinSpec, kappas: &[f64], cases: &[CaseResult]) -> BinReport {
    let breakdowns: Vec<bool> = cases.iter().map(|c| c.breakdown).collect();
    let metrics = Metric::ALL
        .iter()
        .map(|&m| {
            summarize(
                m,
                cases.iter().map(|c| c.per_metric[m.index()]).collect(),
                &breakdowns,
            )
        })
        .collect();
    let kappa_geomean = (kappas.iter().map(|k| k.ln()).sum::<f64>() / kappas.len() as f64).exp();
    BinReport {
        bin_id,
        kappa_lo: spec.kappa_lo,
        kappa_hi: spec.kappa_hi,
        kappa_geomean,
        n_attempted: cases.len(),
        n_breakdowns: breakdowns.iter().filter(|&&b| b).count(),
        n_retries: cases.iter().map(|c| c.retries).sum(),
        metrics,
    }
}

fn run_bin(bin_id: usize, spec: &BinSpec) -> Result<BinReport, BenchError> {
    spec.validate()?;
    let mats: Vec<MatrixCase> = (0..spec.matrices_per_bin)
        .into_par_iter()
        .map(|m| prepare_matrix(spec, m))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..spec.matrices_per_bin)
        .flat_map(|m| (0..spec.rhs_per_matrix).map(move |i| (m, i)))
        .collect();
    let cases: Vec<CaseResult> = jobs
        .par_iter()
        .map(|&(m, i)| {
            let mc = &mats[m];
            solve_case(
                &mc.a,
                &mc.rhs[i],
                &mc.x_true[i],
                spec,
                mix_seed(&[spec.seed, m as u64, i as u64, 2]),
            )
        })
        .collect();
    let kappas: Vec<f64> = mats.iter().map(|m| m.kappa).collect();
    Ok(aggregate(bin_id, spec, &kappas, &cases))
}

/// Runs every bin, with at most `jobs` worker threads (all cores if `None`),
/// and writes the report CSV to `out` if given.
pub fn run_bins(
    specs: &[BinSpec],
    jobs: Option<usize>,
    out: Option<&Path>,
) -> Result<Vec<BinReport>, BenchError> {
    for s in specs {
        s.validate()?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let reports = pool.install(|| {
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| run_bin(i, s))
            .collect::<Result<Vec<_>, _>>()
    })?;
    if let Some(path) = out {
        let f = std::fs::File::create(path)?;
        write_reports_csv(std::io::BufWriter::new(f), &reports)?;
    }
    Ok(reports)
}

/// One row per (bin, metric):
/// `bin_lo, bin_hi, metric_name, mean, median, geomean, n_cases, n_breakdowns`.
pub fn write_reports_csv<W: Write>(w: W, reports: &[BinReport]) -> Result<(), BenchError> {
    #[derive(Serialize)]
    struct Row<'a> {
        bin_lo: f64,
        bin_hi: f64,
        metric_name: &'a str,
        mean: f64,
        median: f64,
        geomean: f64,
        n_cases: usize,
        n_breakdowns: usize,
    }
    let mut wtr = csv::Writer::from_writer(w);
    for r in reports {
        for m in &r.metrics {
            wtr.serialize(Row {
                bin_lo: r.kappa_lo,
                bin_hi: r.kappa_hi,
                metric_name: m.metric.name(),
                mean: m.mean,
                median: m.median,
                geomean: m.geomean,
                n_cases: m.n_cases,
                n_breakdowns: r.n_breakdowns,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Per-bin series of one metric as whitespace-delimited plot data:
/// `bin_lo bin_hi kappa_geomean mean median geomean`.
pub fn write_metric_dat<W: Write>(
    mut w: W,
    reports: &[BinReport],
    metric: Metric,
) -> std::io::Result<()> {
    writeln!(w, "# {metric}")?;
    writeln!(w, "bin_lo bin_hi kappa_geomean mean median geomean")?;
    for r in reports {
        let m = r.metric(metric);
        writeln!(
            w,
            "{} {} {} {} {} {}",
            r.kappa_lo, r.kappa_hi, r.kappa_geomean, m.mean, m.median, m.geomean
        )?;
    }
    Ok(())
}

/// Writes `<stem>.dat` (gnuplot, whitespace-delimited, `#`-prefixed header)
/// and `<stem>.csv` with columns `k`, the oracle errors if given, one column
/// per series and `res_norm`. Missing entries are `NaN`.
pub fn emit_trace_plot(
    trace: &SolveTrace,
    estimates: &[EstimateSeries],
    oracle: Option<&OracleErrors>,
    stem: &Path,
) -> Result<(PathBuf, PathBuf), BenchError> {
    let mut header = vec!["k".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let rows = trace.len() + 1;
    if let Some(o) = oracle {
        header.push("true_anorm_sq".into());
        columns.push(o.anorm_sq.clone());
        header.push("true_l2_sq".into());
        columns.push(o.l2_sq.clone());
    }
    for s in estimates {
        header.push(series_column_name(s));
        columns.push((0..rows).map(|k| s.get(k).unwrap_or(f64::NAN)).collect());
    }
    header.push("res_norm".into());
    columns.push(
        (0..rows)
            .map(|k| trace.res_norm_sq(k).map_or(f64::NAN, f64::sqrt))
            .collect(),
    );

    let dat = stem.with_extension("dat");
    let csv_path = stem.with_extension("csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&dat)?);
    writeln!(w, "# {}", header.join(" "))?;
    for k in 0..rows {
        write!(w, "{k}")?;
        for c in &columns {
            write!(w, " {}", c.get(k).copied().unwrap_or(f64::NAN))?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let mut wtr = csv::Writer::from_path(&csv_path)?;
    wtr.write_record(&header)?;
    for k in 0..rows {
        let mut rec = vec![k.to_string()];
        rec.extend(
            columns
                .iter()
                .map(|c| c.get(k).copied().unwrap_or(f64::NAN).to_string()),
        );
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok((dat, csv_path))
}

fn series_column_name(s: &EstimateSeries) -> String {
    match s.kind {
        EstimateKind::BicgqlAnorm => format!("bicgql_g_d{}", s.d1),
        EstimateKind::BicgqlL2 => format!("bicgql_f_d{}_{}", s.d1, s.d2),
        other => format!("{other}_d{}", s.d1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{anorm_series, l2_series};
    use crate::solvers::cg_solve;

    fn tiny(klass: MatrixClass, lo: f64, hi: f64) -> BinSpec {
        BinSpec {
            matrices_per_bin: 2,
            rhs_per_matrix: 3,
            dim: 20,
            max_iter: 80,
            ..BinSpec::new(lo, hi, klass, 5)
        }
    }

    #[test]
    fn metric_examples() {
        assert_eq!(
            metric_anorm_vs_residual(2.0, 2.0, 0.5, 1.0, 1.0, 1.0),
            Ok(0.0)
        );
        // estimator 10% off, residual 1000% off
        let v = metric_anorm_vs_residual(1.1, 1.0, 11.0, 1.0, 1.0, 1.0).unwrap();
        assert!((v - 0.01).abs() < 1e-12);
        assert_eq!(metric_l2_vs_residual(0.3, 0.3, 0.9, 1.0, 1.0), Ok(0.0));
        assert_eq!(metric_vs_gm(1.0, 1.5, 1.0), Ok(0.0));
        let v = metric_vs_gm(1.2, 1.4, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(
            metric_anorm_vs_residual(1.5, 1.0, 1.0, 1.0, 1.0, 1.0),
            Err(DegenerateCase)
        );
        assert_eq!(metric_vs_gm(2.0, 1.0, 1.0), Err(DegenerateCase));
    }

    #[test]
    fn bin_validation() {
        let mut s = BinSpec::new(10.0, 1.0, MatrixClass::Hpd, 0);
        assert!(s.validate().is_err());
        s.kappa_hi = 10.0;
        assert!(s.validate().is_ok());
        s.rhs_per_matrix = 0;
        assert!(s.validate().is_err());
        assert!(BinSpec::new(1.0, 1.0, MatrixClass::Hpd, 0)
            .validate()
            .is_ok());
    }

    #[test]
    fn kappa_draws_stay_in_bin() {
        let s = BinSpec::new(1e3, 1e4, MatrixClass::Hpd, 3);
        for m in 0..50 {
            let k = draw_kappa(&s, m);
            assert!((1e3..=1e4).contains(&k));
        }
        assert_eq!(
            draw_kappa(&BinSpec::new(1.0, 1.0, MatrixClass::Hpd, 3), 0),
            1.0
        );
    }

    #[test]
    fn identity_bin_gives_zero_ratios() {
        let spec = tiny(MatrixClass::Hpd, 1.0, 1.0);
        let r = run_bins(&[spec], Some(2), None).unwrap();
        for m in &r[0].metrics {
            assert_eq!(m.n_cases, 6, "{}", m.metric);
            assert!(m.per_case.iter().all(|v| *v == Some(0.0)), "{:?}", m);
        }
    }

    #[test]
    fn case_accounting_adds_up() {
        for klass in [MatrixClass::Hpd, MatrixClass::NonsymmetricIndefinite] {
            let r = run_bins(&[tiny(klass, 10.0, 100.0)], Some(2), None).unwrap();
            for m in &r[0].metrics {
                assert_eq!(
                    m.n_cases + m.n_degenerate + r[0].n_breakdowns,
                    r[0].n_attempted
                );
            }
        }
    }

    #[test]
    fn aggregation_is_order_invariant() {
        let spec = tiny(MatrixClass::Hpd, 10.0, 100.0);
        let mk = |v: f64| CaseResult {
            per_metric: [Some(v), Some(v * 2.0), None, Some(v + 1.0)],
            breakdown: false,
            retries: 0,
            iterations: 1,
        };
        let cases: Vec<CaseResult> = [0.3, 0.1, 0.7, 0.25].iter().map(|&v| mk(v)).collect();
        let mut rev = cases.clone();
        rev.reverse();
        let a = aggregate(0, &spec, &[10.0], &cases);
        let b = aggregate(0, &spec, &[10.0], &rev);
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            if x.n_cases > 0 {
                assert!((x.mean - y.mean).abs() <= 1e-12);
                assert_eq!(x.median, y.median);
                assert!((x.geomean - y.geomean).abs() <= 1e-12);
            }
        }
        assert_eq!(a.metric(Metric::AnormVsResidual).median, 0.275);
    }

    #[test]
    fn runs_are_deterministic_across_thread_counts() {
        let spec = tiny(MatrixClass::NonsymmetricIndefinite, 100.0, 1000.0);
        let a = run_bins(&[spec], Some(1), None).unwrap();
        let b = run_bins(&[spec], Some(4), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_csv_schema() {
        let r = run_bins(&[tiny(MatrixClass::Hpd, 1.0, 10.0)], Some(1), None).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "bin_lo,bin_hi,metric_name,mean,median,geomean,n_cases,n_breakdowns"
        );
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn trace_plot_round_trips() {
        let a = gen_matrix(&GenSpec::new(12, 50.0, MatrixClass::Hpd, 1).unwrap());
        let b = vec![1.0; 12];
        let x = crate::linalg::direct_solve(&a, &b).unwrap();
        let opts = SolveOptions::new(40, StoppingCriterion::residual(1e-12)).with_iterates();
        let t = cg_solve(&a, &b, &[0.0; 12], &opts).unwrap().trace;
        let oracle = OracleErrors::from_trace(&a, &x, &t).unwrap();
        let series = vec![
            anorm_series(&t, 2, true),
            l2_series(&t, 1, 1, L2Variant::Consistent, true),
        ];
        let dir = tempfile::tempdir().unwrap();
        let (dat, csv_path) =
            emit_trace_plot(&t, &series, Some(&oracle), &dir.path().join("p")).unwrap();

        let text = std::fs::read_to_string(&dat).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("# k true_anorm_sq"));
        assert_eq!(header.split_whitespace().count() - 1, 6);

        let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
        let cols: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(cols.len(), 6);
        for (k, row) in rdr.records().enumerate() {
            let row = row.unwrap();
            let g: f64 = row[3].parse().unwrap();
            match series[0].get(k) {
                Some(v) => assert_eq!(g.to_bits(), v.to_bits()),
                None => assert!(g.is_nan()),
            }
            let ea: f64 = row[1].parse().unwrap();
            assert_eq!(ea.to_bits(), oracle.anorm_sq[k].to_bits());
        }
    }
}
