//! `dpsk` command line: argument parsing, streaming runs and JSON reports.
//!
//! Exit codes: 0 success, 1 mechanism error, 2 usage error, 3 a verification
//! check did not come out as expected.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::guard::{
    AccuracySpec, PrivacyBudget, DEFAULT_LIFT_CONSTANT, DEFAULT_LINREG_CONSTANT, DEFAULT_MATMULT_CONSTANT,
};
use crate::harness::{self, LowRankFamily};
use crate::io::{self, MatrixFormat};
use crate::lra::{lra_space_formula, LraConfig, LraState};
use crate::matprod::{matprod_space_formula, MatProdConfig, MatProdState, Operand};
use crate::numerics::DenseMatrix;
use crate::par;
use crate::regress::{regress_space_formula, RegressConfig, RegressState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MECHANISM: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dpsk", version, about = "Differentially private matrix sketches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Private rank-k approximation from one pass over the rows
    Lra(LraArgs),
    /// Private approximation of AᵀB
    Multiply(MultiplyArgs),
    /// Private least-squares solution
    Regress(RegressArgs),
    /// Run the Monte-Carlo verification suite
    Verify(VerifyArgs),
    /// Time the trial runner with and without parallelism
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Dpbin,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => MatrixFormat::Csv,
            FormatArg::Dpbin => MatrixFormat::Binary,
        }
    }
}

// Domain checks go through the same constructors the library uses.
fn parse_eps(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    PrivacyBudget::new(v, 0.5).map(|_| v).map_err(|e| e.to_string())
}

fn parse_delta(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    PrivacyBudget::new(1.0, v).map(|_| v).map_err(|e| e.to_string())
}

fn parse_unit(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    AccuracySpec::new(v, 0.5).map(|_| v).map_err(|e| e.to_string())
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, value_parser = parse_eps, allow_hyphen_values = true)]
    pub eps: f64,
    #[arg(long, value_parser = parse_delta, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input matrix, one row per line (CSV) or binary
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to csv for `.csv` files and dpbin otherwise
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Report path; printed to stdout when absent
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Load the full input afterwards and report the error against exact answers
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct LraArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub rank: u64,
    /// Extra sketch columns; defaults to rank + 1
    #[arg(long)]
    pub oversample: Option<usize>,
    /// Split the budget between the two sketches
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub halve_budget: bool,
    /// Constant in the identity lift magnitude
    #[arg(long, value_parser = parse_positive, default_value_t = DEFAULT_LIFT_CONSTANT)]
    pub constant_c: f64,
    /// Input is symmetric; sketch one side only
    #[arg(long)]
    pub symmetric: bool,
}

#[derive(Debug, Args)]
pub struct Accuracy {
    #[arg(long, value_parser = parse_unit, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, value_parser = parse_unit, allow_hyphen_values = true)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct MultiplyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub accuracy: Accuracy,
    /// Second operand, same row count as --input
    #[arg(long)]
    pub input_b: PathBuf,
    #[arg(long, value_parser = parse_positive, default_value_t = DEFAULT_MATMULT_CONSTANT)]
    pub constant_matmult: f64,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub accuracy: Accuracy,
    /// Target vector as an n x 1 matrix
    #[arg(long)]
    pub input_b: PathBuf,
    #[arg(long, value_parser = parse_positive, default_value_t = DEFAULT_LINREG_CONSTANT)]
    pub constant_linreg: f64,
    /// Number of queries the sketch is sized for
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub queries: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fewer trials per check
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 16)]
    pub trials: usize,
    /// Side length of the square test matrices
    #[arg(long, default_value_t = 60)]
    pub size: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn parse_args<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// Parses, runs and maps the outcome to an exit code.
pub fn main_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    par::configure_threads_from_env();
    run(&cli)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ParameterDomain(_) | Error::Configuration(_) => EXIT_USAGE,
        _ => EXIT_MECHANISM,
    }
}

pub fn run(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Lra(a) => run_lra(a).map(|v| (v, EXIT_OK)),
        Command::Multiply(a) => run_multiply(a).map(|v| (v, EXIT_OK)),
        Command::Regress(a) => run_regress(a).map(|v| (v, EXIT_OK)),
        Command::Verify(a) => run_verify(a),
        Command::Bench(a) => run_bench(a).map(|v| (v, EXIT_OK)),
    };
    let report_path = match &cli.command {
        Command::Lra(a) => a.common.report.as_deref(),
        Command::Multiply(a) => a.common.report.as_deref(),
        Command::Regress(a) => a.common.report.as_deref(),
        Command::Verify(a) => a.report.as_deref(),
        Command::Bench(a) => a.report.as_deref(),
    };
    match outcome.and_then(|(report, code)| emit(&report, report_path).map(|_| code)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(report: &Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn format_of(arg: Option<FormatArg>, path: &Path) -> MatrixFormat {
    arg.map_or_else(|| MatrixFormat::from_path(path), Into::into)
}

/// `<report stem>.<suffix>` next to the report.
pub fn side_file(report: &Path, suffix: &str) -> PathBuf {
    report.with_extension(suffix)
}

fn common_params(c: &Common) -> Value {
    json!({
        "eps": c.eps,
        "delta": c.delta,
        "seed": c.seed,
        "input": c.input,
        "oracle": c.oracle,
    })
}

fn merge_into(base: &mut Value, extra: Value) {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn run_lra(a: &LraArgs) -> Result<Value> {
    let start = Instant::now();
    let c = &a.common;
    let fmt = format_of(c.format, &c.input);
    // shape probe: binary reads the header only, CSV is validated in full
    let (n, d) = io::probe_shape(&c.input, fmt)?;
    let k = a.rank as usize;
    let budget = PrivacyBudget::new(c.eps, c.delta)?;
    let mut cfg = if a.symmetric {
        if n != d {
            return Err(Error::Configuration(format!(
                "--symmetric needs a square input, got {n} x {d}"
            )));
        }
        LraConfig::symmetric(n, k, budget, c.seed)
    } else {
        LraConfig::new(n, d, k, budget, c.seed)
    };
    if let Some(p) = a.oversample {
        cfg = cfg.with_oversample(p);
    }
    cfg = cfg.with_halve_budget(a.halve_budget).with_lift_constant(a.constant_c);
    let p = cfg.p;
    let width = cfg.width();

    let mut st = LraState::new(cfg)?;
    let mut peak = st.space_entries();
    for (i, row) in io::open_rows(&c.input, fmt)?.enumerate() {
        let row = row?;
        peak = peak.max(st.space_entries() + row.len());
        st.ingest_row(i, &row)?;
    }
    let formula = lra_space_formula(n, d, width, a.symmetric);
    if peak > formula + d {
        return Err(Error::Capacity(format!("held {peak} entries, limit {}", formula + d)));
    }
    let factor = st.finalize()?;

    let factor_file = match &c.report {
        Some(r) => {
            let path = side_file(r, "factor.dpbin");
            io::write_matrix(&path, &factor.u_hat, MatrixFormat::Binary)?;
            Some(path)
        }
        None => None,
    };
    let oracle = if c.oracle {
        let full = io::read_matrix(&c.input, fmt)?;
        let errs = harness::lra_errors(&full, &factor.reconstruct(), k, p, &budget)?;
        serde_json::to_value(errs).ok()
    } else {
        None
    };

    let mut params = common_params(c);
    merge_into(
        &mut params,
        json!({
            "n": n, "d": d, "rank": k, "oversample": p, "halve_budget": a.halve_budget,
            "constant_c": a.constant_c, "symmetric": a.symmetric,
        }),
    );
    Ok(json!({
        "command": "lra",
        "params": params,
        "guard_report": st.guard(),
        "w": st.w(),
        "lambda": factor.lambda,
        "reduced_rank": factor.reduced_rank,
        "factor_file": factor_file,
        "error_vs_oracle": oracle,
        "space_entries": st.space_entries(),
        "space_formula": formula,
        "peak_entries": peak,
        "wall_time_ms": elapsed_ms(start),
    }))
}

/// Shapes and formats of two operands that must share their row count.
struct PairShape {
    a: (usize, usize),
    b: (usize, usize),
    fa: MatrixFormat,
    fb: MatrixFormat,
}

fn probe_pair(c: &Common, b_path: &Path) -> Result<PairShape> {
    let fa = format_of(c.format, &c.input);
    let fb = format_of(c.format, b_path);
    let sa = io::probe_shape(&c.input, fa)?;
    let sb = io::probe_shape(b_path, fb)?;
    if sa.0 != sb.0 {
        return Err(Error::Contract(format!(
            "operands need the same row count, got {} and {}",
            sa.0, sb.0
        )));
    }
    Ok(PairShape { a: sa, b: sb, fa, fb })
}

fn run_multiply(a: &MultiplyArgs) -> Result<Value> {
    let start = Instant::now();
    let c = &a.common;
    let PairShape {
        a: (n, d1),
        b: (_, d2),
        fa,
        fb,
    } = probe_pair(c, &a.input_b)?;
    let budget = PrivacyBudget::new(c.eps, c.delta)?;
    let acc = AccuracySpec::new(a.accuracy.alpha, a.accuracy.beta)?;
    let mut cfg = MatProdConfig::new(n, d1, d2, budget, acc, c.seed);
    cfg.dim_constant = a.constant_matmult;
    let mut st = MatProdState::new(cfg)?;

    let mut peak = st.space_entries();
    for (which, path, fmt) in [(Operand::A, &c.input, fa), (Operand::B, &a.input_b, fb)] {
        for (i, row) in io::open_rows(path, fmt)?.enumerate() {
            let row = row?;
            peak = peak.max(st.space_entries() + row.len());
            st.ingest_row(which, i, &row)?;
        }
    }
    let formula = matprod_space_formula(st.r(), d1, d2);
    if peak > formula + d1.max(d2) {
        return Err(Error::Capacity(format!(
            "held {peak} entries, limit {}",
            formula + d1.max(d2)
        )));
    }
    let product = st.product_query()?;

    let product_file = match &c.report {
        Some(r) => {
            let path = side_file(r, "product.dpbin");
            io::write_matrix(&path, &product, MatrixFormat::Binary)?;
            Some(path)
        }
        None => None,
    };
    let oracle = if c.oracle {
        let ma = io::read_matrix(&c.input, fa)?;
        let mb = io::read_matrix(&a.input_b, fb)?;
        let errs = harness::matprod_errors(&ma, &mb, &product, acc.alpha(), st.additive_term())?;
        serde_json::to_value(errs).ok()
    } else {
        None
    };

    let mut params = common_params(c);
    merge_into(
        &mut params,
        json!({
            "input_b": a.input_b, "n": n, "d1": d1, "d2": d2, "alpha": acc.alpha(), "beta": acc.beta(),
            "constant_matmult": a.constant_matmult,
        }),
    );
    Ok(json!({
        "command": "multiply",
        "params": params,
        "guard_report": st.guard(),
        "r": st.r(),
        "s": st.s(),
        "additive_term": st.additive_term(),
        "product_file": product_file,
        "error_vs_oracle": oracle,
        "space_entries": st.space_entries(),
        "space_formula": formula,
        "peak_entries": peak,
        "wall_time_ms": elapsed_ms(start),
    }))
}

fn run_regress(a: &RegressArgs) -> Result<Value> {
    let start = Instant::now();
    let c = &a.common;
    let PairShape {
        a: (n, d),
        b: (_, bc),
        fa,
        fb,
    } = probe_pair(c, &a.input_b)?;
    if bc != 1 {
        return Err(Error::Contract(format!("targets must be a single column, got {bc}")));
    }
    let budget = PrivacyBudget::new(c.eps, c.delta)?;
    let acc = AccuracySpec::new(a.accuracy.alpha, a.accuracy.beta)?;
    let mut cfg = RegressConfig::new(n, d, budget, acc, c.seed);
    cfg.dim_constant = a.constant_linreg;
    cfg.planned_queries = a.queries as usize;
    let mut st = RegressState::new(cfg)?;

    let mut peak = st.space_entries();
    for (i, row) in io::open_rows(&c.input, fa)?.enumerate() {
        let row = row?;
        peak = peak.max(st.space_entries() + row.len());
        st.ingest_row(i, &row)?;
    }
    let formula = regress_space_formula(st.r(), d);
    if peak > formula + d {
        return Err(Error::Capacity(format!("held {peak} entries, limit {}", formula + d)));
    }
    // the query vector is not part of the streamed matrix
    let b = io::read_matrix(&a.input_b, fb)?.into_data();
    let answer = st.query(&b)?;

    let oracle = if c.oracle {
        let ma = io::read_matrix(&c.input, fa)?;
        let errs = harness::regress_errors(&ma, &b, &answer.x, acc.alpha(), st.additive_term())?;
        serde_json::to_value(errs).ok()
    } else {
        None
    };

    let mut params = common_params(c);
    merge_into(
        &mut params,
        json!({
            "input_b": a.input_b, "n": n, "d": d, "alpha": acc.alpha(), "beta": acc.beta(),
            "constant_linreg": a.constant_linreg, "queries": a.queries,
        }),
    );
    Ok(json!({
        "command": "regress",
        "params": params,
        "guard_report": st.guard(),
        "r": st.r(),
        "s": st.s(),
        "additive_term": st.additive_term(),
        "x": answer.x,
        "sketch_residual": answer.sketch_residual,
        "solver_iterations": answer.iterations,
        "error_vs_oracle": oracle,
        "space_entries": st.space_entries(),
        "space_formula": formula,
        "peak_entries": peak,
        "wall_time_ms": elapsed_ms(start),
    }))
}

fn run_verify(a: &VerifyArgs) -> Result<(Value, i32)> {
    let start = Instant::now();
    let entries = harness::run_suite(a.quick, a.seed)?;
    for e in &entries {
        let tag = if e.expect_fail { " (expected to fail)" } else { "" };
        eprintln!("{}{tag}", e.report.summary());
    }
    let ok = entries.iter().all(|e| e.ok());
    let checks: Vec<Value> = entries
        .iter()
        .map(|e| {
            let mut v = e.report.to_json();
            merge_into(&mut v, json!({ "expect_fail": e.expect_fail, "ok": e.ok() }));
            v
        })
        .collect();
    let report = json!({
        "command": "verify",
        "params": { "seed": a.seed, "quick": a.quick },
        "checks": checks,
        "pass": ok,
        "wall_time_ms": elapsed_ms(start),
    });
    Ok((report, if ok { EXIT_OK } else { EXIT_VERIFY }))
}

fn bench_trial(family: &LowRankFamily, seed: u64) -> f64 {
    let a: DenseMatrix = family.sample(seed);
    let budget = PrivacyBudget::new(1.0, 0.01).expect("valid budget");
    let cfg = LraConfig::new(family.n, family.d, 5, budget, seed);
    let mut st = LraState::new(cfg).expect("valid config");
    st.ingest_matrix(&a).expect("shapes agree");
    st.finalize().map(|f| f.lambda[0]).unwrap_or(f64::NAN)
}

fn run_bench(a: &BenchArgs) -> Result<Value> {
    if a.size < 12 || a.trials == 0 {
        return Err(Error::Configuration(
            "bench needs --size >= 12 and --trials >= 1".into(),
        ));
    }
    let family = LowRankFamily {
        n: a.size,
        d: a.size,
        rank: 5,
        top: 1e5,
        decay: 0.8,
        noise: 100.0,
    };
    let seeds: Vec<u64> = (0..a.trials as u64).collect();
    let t = Instant::now();
    let seq = par::map_trials_sequential(&seeds, |s| bench_trial(&family, s));
    let sequential_ms = elapsed_ms(t);
    let t = Instant::now();
    let parallel = par::map_trials(&seeds, |s| bench_trial(&family, s));
    let parallel_ms = elapsed_ms(t);
    let identical = seq.iter().zip(&parallel).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok(json!({
        "command": "bench",
        "params": { "trials": a.trials, "size": a.size },
        "parallel_feature": par::parallel_enabled(),
        "sequential_ms": sequential_ms,
        "parallel_ms": parallel_ms,
        "results_identical": identical,
    }))
}
