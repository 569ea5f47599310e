use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use knt::baselines::{ed_test, hz_test, rp_test, RpConfig};
use knt::bench::{bench_dataset, run_bench, BenchConfig};
use knt::embeddings::median_heuristic;
use knt::error::{Error, Result, ResultExt};
use knt::io::{column_names, read_dataset, read_matrix, read_params, to_json, write_table};
use knt::synthdata::{Decay, Scenario, ScenarioKind};
use knt::{
    alpha_schedule, run_test, select_rank, AlphaMode, Bootstrap, DataMode, GramContext,
    KnownParams, Linearization, NullModel, OuterKernel, RankSelectConfig, TestConfig,
};

/// Kernel normality test for vectors or Gram matrices.
#[derive(Parser, Debug)]
#[command(name = "knt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test whether the data are Gaussian. Exit 0 accept, 1 reject, 2 error.
    Test(TestArgs),
    /// Select the covariance rank by sequential testing.
    Rank(RankArgs),
    /// Run a classical normality test.
    Baseline(BaselineArgs),
    /// Write a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Time fast against classical bootstrap and compare their replications.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Vectors,
    Gram,
}

impl From<ModeArg> for DataMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vectors => DataMode::Vectors,
            ModeArg::Gram => DataMode::Gram,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Gaussian,
    Exponential,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BootstrapArg {
    Fast,
    Slow,
    Both,
}

impl From<BootstrapArg> for Bootstrap {
    fn from(b: BootstrapArg) -> Self {
        match b {
            BootstrapArg::Fast => Bootstrap::Fast,
            BootstrapArg::Slow => Bootstrap::Slow,
            BootstrapArg::Both => Bootstrap::Both,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LinearizationArg {
    Auto,
    Analytic,
    FiniteDifference,
}

impl From<LinearizationArg> for Linearization {
    fn from(l: LinearizationArg) -> Self {
        match l {
            LinearizationArg::Auto => Linearization::Auto,
            LinearizationArg::Analytic => Linearization::Analytic,
            LinearizationArg::FiniteDifference => Linearization::FiniteDifference,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum ModelArg {
    Full,
    Known,
    KnownMean,
    Rank(usize),
}

fn parse_model(s: &str) -> std::result::Result<ModelArg, String> {
    match s {
        "full" => Ok(ModelArg::Full),
        "known" => Ok(ModelArg::Known),
        "known-mean" => Ok(ModelArg::KnownMean),
        _ => match s.strip_prefix("rank:") {
            Some(r) => r
                .parse::<usize>()
                .map(ModelArg::Rank)
                .map_err(|_| format!("bad rank in '{s}'")),
            None => Err(format!(
                "unknown null model '{s}' (expected full, known, known-mean or rank:R)"
            )),
        },
    }
}

#[derive(Args, Debug)]
struct KernelOpts {
    /// Outer kernel.
    #[arg(long, value_enum, default_value = "gaussian")]
    kernel: KernelArg,
    /// Gaussian bandwidth; defaults to 1 / (2 median pairwise squared distance).
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args, Debug)]
struct TestArgs {
    /// CSV input.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "vectors")]
    mode: ModeArg,
    #[command(flatten)]
    kernel: KernelOpts,
    /// full, known, known-mean or rank:R.
    #[arg(long = "null-model", value_parser = parse_model, default_value = "full")]
    null_model: ModelArg,
    /// JSON file {"mean": [...], "covariance": [[...]]}. In gram mode the
    /// entries are coefficients on the observations.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05, conflicts_with = "alpha_schedule")]
    alpha: f64,
    /// Use alpha = exp(-0.125 n^0.45).
    #[arg(long = "alpha-schedule")]
    alpha_schedule: bool,
    #[arg(long = "B", default_value_t = 250)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "fast")]
    bootstrap: BootstrapArg,
    #[arg(long, value_enum, default_value = "auto")]
    linearization: LinearizationArg,
    /// Relative finite-difference step.
    #[arg(long = "fd-step", default_value_t = 1e-5)]
    fd_step: f64,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Keep bootstrap replications in the report.
    #[arg(long = "emit-replications")]
    emit_replications: bool,
}

#[derive(Args, Debug)]
struct RankArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "vectors")]
    mode: ModeArg,
    #[command(flatten)]
    kernel: KernelOpts,
    /// Largest rank tried; defaults to min(n - 1, 50).
    #[arg(long = "r-max")]
    r_max: Option<usize>,
    /// Fixed level for every rank. Without it the decreasing schedule is used.
    #[arg(long, conflicts_with = "alpha_schedule")]
    alpha: Option<f64>,
    #[arg(long = "alpha-schedule")]
    alpha_schedule: bool,
    #[arg(long = "B", default_value_t = 250)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "fast")]
    bootstrap: BootstrapArg,
    #[arg(long, value_enum, default_value = "auto")]
    linearization: LinearizationArg,
    #[arg(long = "fd-step", default_value_t = 1e-5)]
    fd_step: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Hz,
    Ed,
    Rp,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    input: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Only the random-projection test accepts gram input.
    #[arg(long, value_enum, default_value = "vectors")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Monte-Carlo draws for the critical value.
    #[arg(long, default_value_t = 1000)]
    calibration: usize,
    /// Directions for the random-projection test.
    #[arg(long, default_value_t = 10)]
    projections: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScenarioArg {
    Null,
    #[value(name = "HA1")]
    Ha1,
    #[value(name = "HA2")]
    Ha2,
    Lowrank,
    LowrankNoisy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DecayArg {
    Poly,
    Exp,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Signal rank for the low-rank scenarios.
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, value_enum, default_value = "exp")]
    decay: DecayArg,
    /// Signal-to-noise ratio for lowrank-noisy.
    #[arg(long, default_value_t = 4.0)]
    rho: f64,
    /// Skip the x1..xd header row.
    #[arg(long = "no-header")]
    no_header: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Vector CSV to benchmark on; without it standard Gaussian data are drawn per size.
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "200,400,800")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, value_enum, default_value = "vectors")]
    mode: ModeArg,
    #[command(flatten)]
    kernel: KernelOpts,
    #[arg(long = "B", default_value_t = 100)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long = "emit-replications")]
    emit_replications: bool,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidArgument(format!("--{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("--{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_replications(b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::InvalidArgument("--B must be at least 1".into()));
    }
    Ok(())
}

impl KernelOpts {
    fn validate(&self) -> Result<()> {
        match (self.kernel, self.sigma) {
            (KernelArg::Exponential, Some(_)) => Err(Error::InvalidArgument(
                "--sigma only applies to the gaussian kernel".into(),
            )),
            (_, Some(s)) => check_positive("sigma", s),
            _ => Ok(()),
        }
    }

    fn resolve(&self, gram: &DMatrix<f64>) -> Result<OuterKernel> {
        Ok(match self.kernel {
            KernelArg::Exponential => OuterKernel::Exponential,
            KernelArg::Gaussian => OuterKernel::Gaussian {
                sigma: match self.sigma {
                    Some(s) => s,
                    None => median_heuristic(gram)?,
                },
            },
        })
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).context(format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}


fn cmd_test(args: TestArgs) -> Result<ExitCode> {
    args.kernel.validate()?;
    if !args.alpha_schedule {
        check_unit("alpha", args.alpha)?;
    }
    check_replications(args.b)?;
    check_positive("fd-step", args.fd_step)?;
    let needs_params = matches!(args.null_model, ModelArg::Known | ModelArg::KnownMean);
    if needs_params && args.params.is_none() {
        return Err(Error::InvalidArgument(
            "--null-model known and known-mean need --params".into(),
        ));
    }
    if !needs_params && args.params.is_some() {
        return Err(Error::InvalidArgument(
            "--params only applies to --null-model known or known-mean".into(),
        ));
    }
    if matches!(args.kernel.kernel, KernelArg::Exponential)
        && matches!(args.linearization, LinearizationArg::Analytic)
    {
        return Err(Error::InvalidArgument(
            "--linearization analytic needs the gaussian kernel".into(),
        ));
    }

    let mode = DataMode::from(args.mode);
    let params = args.params.as_deref().map(read_params).transpose()?;
    let data = read_dataset(&args.input, mode)?;
    let n = data.n();
    let model = match args.null_model {
        ModelArg::Full => NullModel::Full,
        ModelArg::Rank(r) => NullModel::Rank(r),
        ModelArg::Known | ModelArg::KnownMean => {
            let p = params.expect("checked above");
            let (mean, cov) = (p.mean(), p.covariance()?);
            if matches!(args.null_model, ModelArg::Known) && cov.is_none() {
                return Err(Error::InvalidArgument(
                    "--null-model known needs a covariance in --params".into(),
                ));
            }
            let known = match mode {
                DataMode::Vectors => KnownParams::explicit(mean, cov),
                DataMode::Gram => KnownParams::sample(mean, cov),
            };
            if matches!(args.null_model, ModelArg::Known) {
                NullModel::Known(known)
            } else {
                NullModel::KnownMean(known)
            }
        }
    };
    let config = TestConfig {
        kernel: args.kernel.resolve(&data.gram())?,
        model,
        alpha: if args.alpha_schedule { alpha_schedule(n) } else { args.alpha },
        b: args.b,
        seed: args.seed,
        bootstrap: args.bootstrap.into(),
        fd_step: args.fd_step,
        linearization: args.linearization.into(),
    };
    let mut report = run_test(&data, &config)?;
    if !args.emit_replications {
        report.replications = None;
        report.slow_replications = None;
    }
    emit(&to_json(&report)?, args.output.as_deref())?;
    Ok(if report.reject { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_rank(args: RankArgs) -> Result<ExitCode> {
    args.kernel.validate()?;
    if let Some(a) = args.alpha {
        check_unit("alpha", a)?;
    }
    check_replications(args.b)?;
    check_positive("fd-step", args.fd_step)?;
    let data = read_dataset(&args.input, args.mode.into())?;
    let n = data.n();
    let mut config = RankSelectConfig::new(
        args.kernel.resolve(&data.gram())?,
        args.r_max.unwrap_or((n - 1).min(50)),
    );
    config.alpha_mode = match args.alpha {
        Some(alpha) => AlphaMode::Fixed { alpha },
        None => AlphaMode::schedule(),
    };
    config.b = args.b;
    config.seed = args.seed;
    config.bootstrap = args.bootstrap.into();
    config.linearization = args.linearization.into();
    config.fd_step = args.fd_step;
    let report = select_rank(&data, &config)?;
    emit(&to_json(&report)?, args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_baseline(args: BaselineArgs) -> Result<ExitCode> {
    check_unit("alpha", args.alpha)?;
    check_replications(args.calibration)?;
    let mode = DataMode::from(args.mode);
    if matches!(mode, DataMode::Gram) && !matches!(args.method, MethodArg::Rp) {
        return Err(Error::InvalidArgument(
            "only --method rp accepts --mode gram".into(),
        ));
    }
    let report = match args.method {
        MethodArg::Hz => hz_test(&read_matrix(&args.input)?, args.alpha, args.calibration, args.seed)?,
        MethodArg::Ed => ed_test(&read_matrix(&args.input)?, args.alpha, args.calibration, args.seed)?,
        MethodArg::Rp => {
            if args.projections == 0 {
                return Err(Error::InvalidArgument("--projections must be at least 1".into()));
            }
            let ctx = GramContext::new(&read_dataset(&args.input, mode)?)?;
            rp_test(
                &ctx,
                &RpConfig {
                    projections: args.projections,
                    alpha: args.alpha,
                    calibration: args.calibration,
                    seed: args.seed,
                },
            )?
        }
    };
    emit(&to_json(&report)?, args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let decay = match args.decay {
        DecayArg::Poly => Decay::Poly,
        DecayArg::Exp => Decay::Exp,
    };
    let kind = match args.scenario {
        ScenarioArg::Null => ScenarioKind::NullGaussian,
        ScenarioArg::Ha1 => ScenarioKind::MixtureHA1,
        ScenarioArg::Ha2 => ScenarioKind::MixtureHA2,
        ScenarioArg::Lowrank => ScenarioKind::Lowrank {
            decay,
            rank: args.rank,
        },
        ScenarioArg::LowrankNoisy => ScenarioKind::LowrankNoisy {
            decay,
            rank: args.rank,
            rho: args.rho,
        },
    };
    let x = Scenario {
        kind,
        d: args.d,
        n: args.n,
        seed: args.seed,
    }
    .generate()?;
    let header = (!args.no_header).then(|| column_names(x.ncols()));
    let mut buf = Vec::new();
    write_table(&mut buf, &x, header.as_deref())?;
    emit(&String::from_utf8(buf).expect("csv output is utf-8"), args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    args.kernel.validate()?;
    check_replications(args.b)?;
    if matches!(args.mode, ModeArg::Gram) {
        return Err(Error::InvalidArgument("bench needs --mode vectors".into()));
    }
    if args.d == 0 || args.sizes.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument("--d must be positive and every size at least 2".into()));
    }
    let fixed_kernel = match (args.kernel.kernel, args.kernel.sigma) {
        (KernelArg::Exponential, _) => Some(OuterKernel::Exponential),
        (KernelArg::Gaussian, Some(sigma)) => Some(OuterKernel::Gaussian { sigma }),
        (KernelArg::Gaussian, None) => None,
    };
    let mut config = BenchConfig::new(args.sizes.clone(), args.d, args.b, args.seed);
    config.kernel = fixed_kernel;
    config.emit_replications = args.emit_replications;
    let report = match &args.input {
        None => run_bench(&config)?,
        Some(path) => {
            let x = read_matrix(path)?;
            config.d = x.ncols();
            let row = bench_dataset(x, &config, args.seed)?;
            knt::bench::BenchReport {
                d: config.d,
                b: config.b,
                seed: config.seed,
                model: config.model.label(),
                rows: vec![row],
            }
        }
    };
    emit(&to_json(&report)?, args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("KNT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("KNT_THREADS must be a count, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
