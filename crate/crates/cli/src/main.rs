//! `vcqr`: fit, test and simulate varying-coefficient quantile regressions.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

mod commands;
mod config;
mod error;
mod ingest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vcqr::hyptest::Calibration;
use vcqr::sim::{Alternative, ErrorLaw, KnotPolicy, Model, TestKind};

use config::{RunConfig, Selection};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "vcqr",
    version,
    about = "Varying-coefficient quantile regression with polynomial splines"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit coefficient curves with stepwise or fixed knots.
    Fit(FitArgs),
    /// Test whether the coefficients vary with the index.
    Test(TestArgs),
    /// Monte Carlo type I error and power study.
    Simulate(SimArgs),
    /// Write a synthetic lung-function sample (age, fev, height, sex, smoke).
    SynthFev(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    response: Option<String>,
    /// Index column (the variable the coefficients depend on).
    #[arg(long)]
    index: Option<String>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Product terms such as `H*S`, comma separated.
    #[arg(long, value_delimiter = ',')]
    interactions: Option<Vec<String>>,
    /// Quantile levels, comma separated.
    #[arg(long = "tau", value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long, value_enum)]
    selection: Option<Selection>,
    /// Candidate knots for the stepwise search, comma separated.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<f64>>,
    /// Number of equispaced candidate knots.
    #[arg(long)]
    candidate_count: Option<usize>,
    /// Knots used with `--selection fixed`, comma separated.
    #[arg(long, value_delimiter = ',')]
    fixed_knots: Option<Vec<f64>>,
    /// Equispaced knot count used with `--selection fixed`.
    #[arg(long)]
    fixed_count: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Random seed (also read from VCQR_SEED).
    #[arg(long, env = "VCQR_SEED")]
    seed: Option<u64>,
    /// Smallest accepted number of data rows.
    #[arg(long)]
    min_rows: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Outputs to write, comma separated (curves, trace, report).
    #[arg(long, value_delimiter = ',')]
    emit: Option<Vec<String>>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Rescale observations by an estimated linear scale model.
    #[arg(long)]
    weighted: bool,
    /// Also run the bootstrap likelihood-ratio-type test.
    #[arg(long)]
    lr: bool,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, value_parser = parse_calibration)]
    calibration: Option<Calibration>,
}

#[derive(Args)]
struct SimArgs {
    /// JSON run configuration; the `simulation` object holds the study.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV.
    #[arg(long, default_value = "power.csv")]
    out: PathBuf,
    #[arg(long, env = "VCQR_SEED")]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_model)]
    model: Option<Model>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, value_parser = parse_law)]
    error_law: Option<ErrorLaw>,
    #[arg(long, value_parser = parse_alternative)]
    alternative: Option<Alternative>,
    #[arg(long)]
    amplitude: Option<f64>,
    /// Tests to run, comma separated (rs, rs_weighted, lr).
    #[arg(long, value_delimiter = ',', value_parser = parse_test)]
    tests: Option<Vec<TestKind>>,
    /// Use this many fixed equispaced knots instead of adaptive selection.
    #[arg(long)]
    fixed_knots: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 654)]
    n: usize,
    #[arg(long, env = "VCQR_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "fev.csv")]
    out: PathBuf,
}

fn parse_snake<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value '{s}'"))
}

fn parse_calibration(s: &str) -> Result<Calibration, String> {
    parse_snake(s)
}

fn parse_model(s: &str) -> Result<Model, String> {
    parse_snake(&s.to_uppercase())
}

fn parse_law(s: &str) -> Result<ErrorLaw, String> {
    parse_snake(s)
}

fn parse_alternative(s: &str) -> Result<Alternative, String> {
    parse_snake(s)
}

fn parse_test(s: &str) -> Result<TestKind, String> {
    parse_snake(s)
}

fn apply_data_args(cfg: &mut RunConfig, a: DataArgs) {
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    if a.input.is_some() {
        cfg.input = a.input;
    }
    if a.response.is_some() {
        cfg.response = a.response;
    }
    if a.index.is_some() {
        cfg.index = a.index;
    }
    set!(cfg.covariates, a.covariates);
    set!(cfg.interactions, a.interactions);
    set!(cfg.taus, a.taus);
    set!(cfg.degree, a.degree);
    set!(cfg.knots.selection, a.selection);
    if a.candidates.is_some() {
        cfg.knots.candidates = a.candidates;
    }
    if a.candidate_count.is_some() {
        cfg.knots.candidate_count = a.candidate_count;
    }
    if a.fixed_knots.is_some() {
        cfg.knots.fixed_knots = a.fixed_knots;
    }
    if a.fixed_count.is_some() {
        cfg.knots.fixed_count = a.fixed_count;
    }
    set!(cfg.out_dir, a.out_dir);
    set!(cfg.seed, a.seed);
    set!(cfg.min_rows, a.min_rows);
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure threads: {e}")))?;
    }
    let report = |paths: Vec<PathBuf>| {
        for p in paths {
            eprintln!("wrote {}", p.display());
        }
    };
    match cli.command {
        Command::Fit(args) => {
            let mut cfg = RunConfig::load(args.data.config.as_deref())?;
            apply_data_args(&mut cfg, args.data);
            if let Some(emit) = args.emit {
                cfg.emit.curves = emit.iter().any(|e| e == "curves");
                cfg.emit.trace = emit.iter().any(|e| e == "trace");
                cfg.emit.report = emit.iter().any(|e| e == "report");
                if let Some(bad) = emit
                    .iter()
                    .find(|e| !["curves", "trace", "report"].contains(&e.as_str()))
                {
                    return Err(CliError::Config(format!("unknown output '{bad}'")));
                }
            }
            report(commands::run_fit(&cfg)?);
        }
        Command::Test(args) => {
            let mut cfg = RunConfig::load(args.data.config.as_deref())?;
            apply_data_args(&mut cfg, args.data);
            cfg.weighted |= args.weighted;
            cfg.lr |= args.lr;
            if let Some(b) = args.bootstrap {
                cfg.bootstrap = b;
            }
            if let Some(c) = args.calibration {
                cfg.calibration = c;
            }
            report(commands::run_test(&cfg)?);
        }
        Command::Simulate(a) => {
            let mut cfg = RunConfig::load(a.config.as_deref())?;
            let s = &mut cfg.simulation;
            if let Some(v) = a.seed {
                s.seed = v;
            }
            if let Some(v) = a.model {
                s.model = v;
            }
            if let Some(v) = a.tau {
                s.tau = v;
            }
            if let Some(v) = a.n {
                s.n = v;
            }
            if let Some(v) = a.replications {
                s.replications = v;
            }
            if let Some(v) = a.error_law {
                s.error_law = v;
            }
            if let Some(v) = a.alternative {
                s.alternative = v;
            }
            if let Some(v) = a.amplitude {
                s.amplitude = v;
            }
            if let Some(v) = a.tests {
                s.tests = v;
            }
            if let Some(k) = a.fixed_knots {
                s.knot_policy = KnotPolicy::Fixed(k);
            }
            if let Some(v) = a.bootstrap {
                s.bootstrap = v;
            }
            report(vec![commands::run_simulate(&cfg, &a.out)?]);
        }
        Command::SynthFev(a) => report(vec![commands::run_synth_fev(a.n, a.seed, &a.out)?]),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vcqr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
