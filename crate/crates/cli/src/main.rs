use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use scasml::harness::{
    emit_report, run_benchmark, run_convergence, run_scaling, write_report, ClipSetting, FitSpec, MetricsRow,
    ProblemName, ReportFormat, RunOutcome, RunSpec, SurrogateSpec, VariantName,
};
use scasml::oracle::{picard_oracle, OracleOptions};
use scasml::problem::SpaceTimePoint;
use scasml::scasml::solve_point;
use scasml::surrogate::fit_rbf;

/// Surrogate correction of semi-linear parabolic PDE solutions by
/// multilevel Picard Monte Carlo.
#[derive(Parser, Debug)]
#[command(name = "scasml", version)]
struct Cli {
    /// TOML file mirroring the run specification; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// SR, MLP and SCaSML rows over one test set.
    Benchmark(RunArgs),
    /// SCaSML rows for a sweep of sample bases M.
    Scale {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated sample bases.
        #[arg(long, value_delimiter = ',', default_value = "10,12,14,16")]
        bases: Vec<u32>,
    },
    /// Refits the RBF surrogate at several training sizes and fits log-log slopes.
    Converge {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated training sizes (at least 3).
        #[arg(long, value_delimiter = ',', default_value = "125,250,500,1000")]
        sizes: Vec<usize>,
    },
    /// Fits an RBF surrogate to the reference and writes it to `--out`.
    FitSurrogate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Corrected solution at a single point.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        t: f64,
        /// Comma-separated spatial coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
    },
    /// Grid Picard reference for a one-dimensional problem.
    #[command(hide = true)]
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        t: f64,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// lcd, vb, lqg or dr.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// fullhist or quad.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long)]
    base: Option<u32>,
    /// Time-sampling exponent of the full-history variant.
    #[arg(long)]
    alpha: Option<f64>,
    /// Gauss-Legendre order of the quadrature variant.
    #[arg(long)]
    order: Option<usize>,
    /// auto, none or a positive threshold.
    #[arg(long)]
    clip: Option<String>,
    /// zero, synthetic:<e>, rbf:<file> or fit.
    #[arg(long)]
    surrogate: Option<String>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// csv or jsonl.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    centers: Option<usize>,
    #[arg(long)]
    lengthscale: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }
}

fn parse<T: FromStr<Err = scasml::Error>>(s: &str) -> Result<T, Failure> {
    s.parse().map_err(Failure::validation)
}

/// Config file (if any), then flags on top, then validation.
fn build_spec(config: Option<&PathBuf>, args: &RunArgs) -> Result<RunSpec, Failure> {
    let mut spec = match config {
        Some(path) => RunSpec::load(path).map_err(Failure::validation)?,
        None => RunSpec::default(),
    };
    if let Some(p) = &args.problem {
        spec.problem.name = parse::<ProblemName>(p)?;
    }
    if let Some(d) = args.dim {
        spec.problem.dim = d;
    }
    if let Some(v) = &args.variant {
        spec.mlp.variant = parse::<VariantName>(v)?;
    }
    if let Some(n) = args.levels {
        spec.mlp.levels = n;
    }
    if let Some(m) = args.base {
        spec.mlp.base = m;
    }
    if let Some(a) = args.alpha {
        spec.mlp.alpha = a;
    }
    if let Some(q) = args.order {
        spec.mlp.order = q;
    }
    if let Some(c) = &args.clip {
        spec.mlp.clip = parse::<ClipSetting>(c)?;
    }
    if let Some(s) = &args.surrogate {
        let requested = parse::<SurrogateSpec>(s)?;
        // a bare `fit` keeps fit settings already given in the config file
        if !(matches!(requested, SurrogateSpec::Fit(_)) && matches!(spec.surrogate, SurrogateSpec::Fit(_))) {
            spec.surrogate = requested;
        }
    }
    if let Some(n) = args.points {
        spec.points = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(o) = &args.out {
        spec.out = Some(o.clone());
    }
    if let Some(f) = &args.format {
        spec.format = parse::<ReportFormat>(f)?;
    }
    if let Some(w) = args.workers {
        spec.workers = w;
    }
    spec.validate().map_err(Failure::validation)?;
    Ok(spec)
}

fn emit(spec: &RunSpec, rows: &[MetricsRow]) -> Result<(), Failure> {
    match &spec.out {
        Some(path) => emit_report(rows, path, spec.format).map_err(Failure::runtime),
        None => write_report(rows, io::stdout().lock(), spec.format).map_err(Failure::runtime),
    }
}

/// Writes the rows that were produced, then fails if any method lost its row.
fn finish(spec: &RunSpec, outcome: &RunOutcome) -> Result<(), Failure> {
    emit(spec, &outcome.rows)?;
    match outcome.failures.first() {
        None => Ok(()),
        Some(f) => Err(Failure::runtime(anyhow!(
            "{} row omitted: {} (first error: {})",
            f.method,
            f.to_error(),
            f.first_error
        ))),
    }
}

/// Execution errors caused by bad input map to 1, everything else to 2.
fn classify(e: scasml::Error) -> Failure {
    use scasml::Error as E;
    match e {
        E::InvalidArgument(_) | E::DimensionMismatch { .. } | E::Malformed(_) => Failure::validation(e),
        other => Failure::runtime(other),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = cli.config.as_ref();
    match cli.command {
        Command::Benchmark(args) => {
            let spec = build_spec(config, &args)?;
            let outcome = run_benchmark(&spec).map_err(classify)?;
            finish(&spec, &outcome)
        }
        Command::Scale { run, bases } => {
            let spec = build_spec(config, &run)?;
            if bases.contains(&0) {
                return Err(Failure::validation(anyhow!("sample bases must be positive")));
            }
            let outcome = run_scaling(&spec, &bases).map_err(classify)?;
            finish(&spec, &outcome)
        }
        Command::Converge { run, sizes } => {
            let spec = build_spec(config, &run)?;
            if sizes.len() < 3 || sizes.contains(&0) {
                return Err(Failure::validation(anyhow!(
                    "a convergence fit needs at least 3 positive training sizes"
                )));
            }
            let report = run_convergence(&spec, &sizes).map_err(classify)?;
            eprintln!("slope SR {:.4} SCaSML {:.4}", report.sr_slope, report.scasml_slope);
            finish(&spec, &report.outcome)
        }
        Command::FitSurrogate { run, fit } => {
            let spec = build_spec(config, &run)?;
            let out = spec
                .out
                .clone()
                .ok_or_else(|| Failure::validation(anyhow!("fit-surrogate needs --out")))?;
            let mut f = match &spec.surrogate {
                SurrogateSpec::Fit(f) => f.clone(),
                _ => FitSpec::default(),
            };
            f.n_train = fit.n_train.unwrap_or(f.n_train);
            f.centers = fit.centers.unwrap_or(f.centers);
            f.lengthscale = fit.lengthscale.unwrap_or(f.lengthscale);
            f.ridge = fit.ridge.unwrap_or(f.ridge);
            let checked = RunSpec {
                surrogate: SurrogateSpec::Fit(f.clone()),
                ..spec.clone()
            };
            checked.validate().map_err(Failure::validation)?;
            let pde = spec.problem.build().map_err(Failure::validation)?;
            let surrogate = fit_rbf(&pde, &spec.fit_options(&f)).map_err(classify)?;
            surrogate.save(&out).map_err(Failure::runtime)?;
            eprintln!("wrote {} centers to {}", surrogate.weights().len(), out.display());
            Ok(())
        }
        Command::Solve { run, t, x } => {
            let spec = build_spec(config, &run)?;
            let pde = spec.problem.build().map_err(Failure::validation)?;
            let surrogate = spec.build_surrogate(&pde).map_err(classify)?;
            let cfg = spec.mlp_config(true).map_err(Failure::validation)?;
            let p = SpaceTimePoint::new(t, x);
            let r = solve_point(&pde, Arc::clone(&surrogate), &cfg, &p, spec.laplacian_mode(), 0).map_err(classify)?;
            let reference = pde.reference().map(|u| u.value(p.t, &p.x));
            let line = serde_json::json!({
                "t": p.t,
                "x": p.x,
                "value": r.value,
                "surrogate_value": r.surrogate_value,
                "correction": r.correction.value(),
                "gradient_scaled": r.gradient_scaled,
                "reference": reference,
                "wall_time_s": r.wall_time,
            });
            writeln!(io::stdout().lock(), "{line}").map_err(Failure::runtime)
        }
        Command::Oracle { run, t, x } => {
            let spec = build_spec(config, &run)?;
            let pde = spec.problem.build().map_err(Failure::validation)?;
            let grid = picard_oracle(&pde, &OracleOptions::default()).map_err(classify)?;
            let line = serde_json::json!({
                "t": t,
                "x": x,
                "value": grid.value(t, x),
                "iterations": grid.iterations,
            });
            writeln!(io::stdout().lock(), "{line}").map_err(Failure::runtime)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error.context(if f.code == 1 { "validation failed" } else { "run failed" }));
            ExitCode::from(f.code)
        }
    }
}
