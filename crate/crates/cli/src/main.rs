//! `bicgql` command-line driver: solve, estimate, generate and benchmark.
//!
//! Exit codes: 0 converged (or success), 1 bad configuration or I/O error,
//! 2 iteration limit reached, 3 solver breakdown.

mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use bicgql::bench::{
    decade_bins, emit_trace_plot, mix_seed, run_bins, write_metric_dat, BinReport, BinSpec, Metric,
    OracleErrors, BENCH_TOL,
};
use bicgql::estimators::{anorm_series, l2_series, residual_series, write_series_csv, L2Variant};
use bicgql::linalg::mmio::{load_matrix, load_vector, save_matrix, save_vector};
use bicgql::linalg::{direct_solve, norm2, DenseOperator, LinearOperator};
use bicgql::matgen::{gen_matrix, gen_rhs_suite, GenSpec, MatrixClass};
use bicgql::solvers::{solve, Method, Solution, SolveOptions, StoppingCriterion, Termination};

use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "bicgql",
    version,
    about = "BiCG/CG solvers with online error-norm estimates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one system and write the solution, trace and estimate series.
    Solve(Opts),
    /// Like `solve`, but also compute the true errors and write plot data.
    Estimate(Opts),
    /// Write a generated matrix and right-hand sides as Matrix Market files.
    Gen(Opts),
    /// Run the condition-number-binned benchmark.
    Bench(Opts),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum CriterionArg {
    Residual,
    Anorm,
    L2,
}

impl FromStr for CriterionArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "residual" => Ok(Self::Residual),
            "anorm" => Ok(Self::Anorm),
            "l2" => Ok(Self::L2),
            other => Err(format!("unknown criterion `{other}` (residual, anorm, l2)")),
        }
    }
}

#[derive(Args, Default)]
struct Opts {
    /// Matrix Market file holding A.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Matrix Market vector file holding b [default: a canonical basis vector].
    #[arg(long)]
    rhs: Option<PathBuf>,
    /// Generate A with this condition number instead of reading --matrix.
    #[arg(long)]
    gen_kappa: Option<f64>,
    /// hpd or nonsym [default: hpd; bench runs both when unset].
    #[arg(long)]
    gen_class: Option<MatrixClass>,
    /// Dimension of generated matrices [default: 100].
    #[arg(long)]
    dim: Option<usize>,
    /// cg, bicg or bicgstab [default: bicg].
    #[arg(long)]
    method: Option<Method>,
    /// residual, anorm or l2 [default: residual].
    #[arg(long)]
    criterion: Option<CriterionArg>,
    /// Stopping threshold [default: 1e-10].
    #[arg(long)]
    tol: Option<f64>,
    /// Delay of the A-norm estimate [default: 4].
    #[arg(long)]
    d1: Option<usize>,
    /// Extra delay of the l2 estimate [default: 4].
    #[arg(long)]
    d2: Option<usize>,
    /// consistent or paper [default: consistent].
    #[arg(long)]
    l2_variant: Option<L2Variant>,
    /// Iteration cap [default: 4 x dim].
    #[arg(long)]
    max_iter: Option<usize>,
    /// `decades` or a comma list of `lo:hi` κ ranges [default: decades].
    #[arg(long)]
    bins: Option<String>,
    /// Bench: `MxR` matrices x right-hand sides, `desk` (10x10) or `full`
    /// (10x100) [default: desk]. Gen: number of right-hand sides [default: 1].
    #[arg(long)]
    cases: Option<String>,
    /// Master seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: bicgql-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` file with any of the flags above; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for bench [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
}

/// Fully resolved options.
struct RunConfig {
    matrix: Option<PathBuf>,
    rhs: Option<PathBuf>,
    gen_kappa: Option<f64>,
    gen_class: Option<MatrixClass>,
    dim: usize,
    method: Method,
    criterion: CriterionArg,
    tol: f64,
    d1: usize,
    d2: usize,
    l2_variant: L2Variant,
    max_iter: Option<usize>,
    bins: String,
    cases: Option<String>,
    seed: u64,
    out: PathBuf,
    jobs: Option<usize>,
}

impl RunConfig {
    fn resolve(o: Opts) -> Result<Self> {
        let file = match &o.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let cfg = Self {
            matrix: file.pick(o.matrix, "matrix")?,
            rhs: file.pick(o.rhs, "rhs")?,
            gen_kappa: file.pick(o.gen_kappa, "gen-kappa")?,
            gen_class: file.pick(o.gen_class, "gen-class")?,
            dim: file.pick(o.dim, "dim")?.unwrap_or(100),
            method: file.pick(o.method, "method")?.unwrap_or(Method::Bicg),
            criterion: file
                .pick(o.criterion, "criterion")?
                .unwrap_or(CriterionArg::Residual),
            tol: file.pick(o.tol, "tol")?.unwrap_or(1e-10),
            d1: file.pick(o.d1, "d1")?.unwrap_or(4),
            d2: file.pick(o.d2, "d2")?.unwrap_or(4),
            l2_variant: file.pick(o.l2_variant, "l2-variant")?.unwrap_or_default(),
            max_iter: file.pick(o.max_iter, "max-iter")?,
            bins: file
                .pick(o.bins, "bins")?
                .unwrap_or_else(|| "decades".into()),
            cases: file.pick(o.cases, "cases")?,
            seed: file.pick(o.seed, "seed")?.unwrap_or(0),
            out: file
                .pick(o.out, "out")?
                .unwrap_or_else(|| "bicgql-out".into()),
            jobs: file.pick(o.jobs, "jobs")?,
        };
        ensure!(cfg.dim >= 2, "--dim must be at least 2");
        ensure!(
            cfg.tol.is_finite() && cfg.tol > 0.0,
            "--tol must be positive"
        );
        ensure!(cfg.max_iter != Some(0), "--max-iter must be at least 1");
        ensure!(cfg.jobs != Some(0), "--jobs must be at least 1");
        Ok(cfg)
    }

    fn max_iter(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or(4 * dim)
    }

    fn class(&self) -> MatrixClass {
        self.gen_class.unwrap_or(MatrixClass::Hpd)
    }

    fn criterion(&self) -> StoppingCriterion {
        match self.criterion {
            CriterionArg::Residual => StoppingCriterion::residual(self.tol),
            CriterionArg::Anorm => StoppingCriterion::anorm(self.tol, self.d1),
            CriterionArg::L2 => {
                StoppingCriterion::l2(self.tol, self.d1, self.d2).with_l2_variant(self.l2_variant)
            }
        }
    }

    /// The matrix and whether it is known to be HPD.
    fn load_system(&self) -> Result<(DenseOperator, bool)> {
        match (&self.matrix, self.gen_kappa) {
            (Some(_), Some(_)) => bail!("give either --matrix or --gen-kappa, not both"),
            (None, None) => bail!("one of --matrix or --gen-kappa is required"),
            (Some(p), None) => {
                let a = load_matrix(p).with_context(|| format!("reading {}", p.display()))?;
                let hpd = a.is_positive_definite();
                Ok((a, hpd))
            }
            (None, Some(kappa)) => {
                let spec = GenSpec::new(self.dim, kappa, self.class(), self.seed)?;
                Ok((gen_matrix(&spec), spec.klass == MatrixClass::Hpd))
            }
        }
    }

    fn load_rhs(&self, dim: usize) -> Result<Vec<f64>> {
        let b = match &self.rhs {
            Some(p) => load_vector(p).with_context(|| format!("reading {}", p.display()))?,
            None => gen_rhs_suite(dim, 1, self.seed)?.remove(0),
        };
        ensure!(
            b.len() == dim,
            "right-hand side has length {}, matrix has dimension {dim}",
            b.len()
        );
        Ok(b)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn exit_for(t: Termination) -> ExitCode {
    match t {
        Termination::Converged => ExitCode::SUCCESS,
        Termination::MaxIter => ExitCode::from(2),
        Termination::Breakdown => ExitCode::from(3),
    }
}

fn run_solve(cfg: &RunConfig, with_oracle: bool) -> Result<ExitCode> {
    let (a, hpd) = cfg.load_system()?;
    let b = cfg.load_rhs(a.dim())?;
    let mut opts = SolveOptions::new(cfg.max_iter(a.dim()), cfg.criterion());
    if with_oracle {
        opts = opts.with_iterates();
    }
    let x0 = vec![0.0; a.dim()];
    let Solution { x, trace } = solve(cfg.method, &a, &b, &x0, None, &opts)?;
    let out = cfg.out_dir()?;

    save_vector(out.join("solution.mtx"), &x)?;
    trace.write_csv(BufWriter::new(File::create(out.join("trace.csv"))?))?;
    let series = vec![
        anorm_series(&trace, cfg.d1, hpd),
        l2_series(&trace, cfg.d1, cfg.d2, cfg.l2_variant, hpd),
        residual_series(&trace),
    ];
    write_series_csv(
        BufWriter::new(File::create(out.join("estimates.csv"))?),
        &series,
    )?;

    if with_oracle {
        // a singular system has no reference solution; plot the estimates alone
        let oracle = direct_solve(&a, &b)
            .ok()
            .and_then(|xt| OracleErrors::from_trace(&a, &xt, &trace));
        emit_trace_plot(
            &trace,
            &series[..2],
            oracle.as_ref(),
            &out.join("trace_plot"),
        )?;
    }

    let rel = trace.final_res_norm_sq.sqrt() / norm2(&b).max(f64::MIN_POSITIVE);
    eprintln!(
        "{:?} after {} iterations (method {}, relative residual {rel:.3e})",
        trace.termination,
        trace.len(),
        cfg.method
    );
    Ok(exit_for(trace.termination))
}

fn run_gen(cfg: &RunConfig) -> Result<ExitCode> {
    let kappa = cfg.gen_kappa.context("gen requires --gen-kappa")?;
    ensure!(cfg.matrix.is_none(), "gen does not read --matrix");
    let count: usize = match &cfg.cases {
        None => 1,
        Some(s) => s
            .parse()
            .with_context(|| format!("--cases `{s}`: gen expects a count"))?,
    };
    let spec = GenSpec::new(cfg.dim, kappa, cfg.class(), cfg.seed)?;
    let out = cfg.out_dir()?;
    save_matrix(out.join("matrix.mtx"), &gen_matrix(&spec))?;
    for (i, b) in gen_rhs_suite(cfg.dim, count, cfg.seed)?.iter().enumerate() {
        save_vector(out.join(format!("rhs_{i:03}.mtx")), b)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_cases(s: Option<&str>) -> Result<(usize, usize)> {
    match s.unwrap_or("desk") {
        "desk" => Ok((10, 10)),
        "full" => Ok((10, 100)),
        other => {
            let (m, r) = other
                .split_once('x')
                .with_context(|| format!("--cases `{other}`: expected MxR, desk or full"))?;
            Ok((m.trim().parse()?, r.trim().parse()?))
        }
    }
}

fn parse_bins(s: &str) -> Result<Option<Vec<(f64, f64)>>> {
    if s == "decades" {
        return Ok(None);
    }
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .with_context(|| format!("--bins entry `{part}`: expected lo:hi"))?;
            Ok((lo.trim().parse()?, hi.trim().parse()?))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn bench_specs(cfg: &RunConfig, klass: MatrixClass) -> Result<Vec<BinSpec>> {
    let class_seed = mix_seed(&[cfg.seed, klass as u64]);
    let mut specs = match parse_bins(&cfg.bins)? {
        None => decade_bins(klass, class_seed),
        Some(ranges) => ranges
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| BinSpec::new(lo, hi, klass, mix_seed(&[class_seed, i as u64])))
            .collect(),
    };
    let (mats, rhs) = parse_cases(cfg.cases.as_deref())?;
    for s in &mut specs {
        s.matrices_per_bin = mats;
        s.rhs_per_matrix = rhs;
        s.dim = cfg.dim;
        s.method = cfg.method;
        s.d1 = cfg.d1;
        s.d2 = cfg.d2;
        s.l2_variant = cfg.l2_variant;
        s.max_iter = cfg.max_iter(cfg.dim);
    }
    Ok(specs)
}

fn print_summary(klass: MatrixClass, reports: &[BinReport]) {
    println!("{klass}: bin_lo bin_hi kappa_geomean cases breakdowns | mean per metric");
    for r in reports {
        let means: Vec<String> = Metric::ALL
            .iter()
            .map(|&m| format!("{}={:.3e}", m.name(), r.metric(m).mean))
            .collect();
        println!(
            "  {:>8.1e} {:>8.1e} {:>10.3e} {:>4} {:>3} | {}",
            r.kappa_lo,
            r.kappa_hi,
            r.kappa_geomean,
            r.n_attempted,
            r.n_breakdowns,
            means.join(" ")
        );
    }
}

/// Convergence history on one κ = 1e4 system of the class, for trace plots.
fn bench_trace(cfg: &RunConfig, klass: MatrixClass, out: &Path) -> Result<()> {
    let spec = GenSpec::new(cfg.dim, 1e4, klass, mix_seed(&[cfg.seed, 7]))?;
    let a = gen_matrix(&spec);
    let b = gen_rhs_suite(cfg.dim, 1, mix_seed(&[cfg.seed, 8]))?.remove(0);
    let opts = SolveOptions::new(
        cfg.max_iter(cfg.dim),
        StoppingCriterion::residual(BENCH_TOL),
    )
    .with_iterates();
    let trace = solve(cfg.method, &a, &b, &vec![0.0; cfg.dim], None, &opts)?.trace;
    let hpd = klass == MatrixClass::Hpd;
    let series = [
        anorm_series(&trace, 0, hpd),
        anorm_series(&trace, cfg.d1, hpd),
        l2_series(&trace, 0, 0, cfg.l2_variant, hpd),
        l2_series(&trace, cfg.d1, cfg.d2, cfg.l2_variant, hpd),
    ];
    let oracle = direct_solve(&a, &b)
        .ok()
        .and_then(|xt| OracleErrors::from_trace(&a, &xt, &trace));
    emit_trace_plot(
        &trace,
        &series,
        oracle.as_ref(),
        &out.join(format!("trace_{klass}")),
    )?;
    Ok(())
}

fn run_bench(cfg: &RunConfig) -> Result<ExitCode> {
    ensure!(
        cfg.matrix.is_none() && cfg.gen_kappa.is_none(),
        "bench generates its own matrices; drop --matrix/--gen-kappa"
    );
    let classes = match cfg.gen_class {
        Some(k) => vec![k],
        None => vec![MatrixClass::Hpd, MatrixClass::NonsymmetricIndefinite],
    };
    let out = cfg.out_dir()?;
    for klass in classes {
        let specs = bench_specs(cfg, klass)?;
        let reports = run_bins(
            &specs,
            cfg.jobs,
            Some(&out.join(format!("bins_{klass}.csv"))),
        )?;
        for m in Metric::ALL {
            let f = File::create(out.join(format!("{klass}_{}.dat", m.name())))?;
            write_metric_dat(BufWriter::new(f), &reports, m)?;
        }
        bench_trace(cfg, klass, out)?;
        print_summary(klass, &reports);
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve(o) => run_solve(&RunConfig::resolve(o)?, false),
        Command::Estimate(o) => run_solve(&RunConfig::resolve(o)?, true),
        Command::Gen(o) => run_gen(&RunConfig::resolve(o)?),
        Command::Bench(o) => run_bench(&RunConfig::resolve(o)?),
    }
}

fn main() -> ExitCode {
    if std::env::args_os().len() <= 1 {
        let _ = Cli::command().write_long_help(&mut std::io::stderr());
        return ExitCode::from(1);
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
