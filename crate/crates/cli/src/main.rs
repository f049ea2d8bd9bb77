//! `smcts` command-line tool. JSON results go to stdout, logs to stderr.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use smcts::bench::{brute_force_optimal, dice_coefficient, run_sweep, surrogate_ratio, SweepSpec};
use smcts::evaluation::calibrate_sigma;
use smcts::ingest::{aggregate_csv_file, filter_county, ColumnMap, IngestOptions};
use smcts::{
    Error, LossModel, MainModel, NaiveSurrogate, NoisySurrogate, SearchConfig, SearchResult, Searcher, StoreNetwork,
    TieBreak, UcbVariant,
};

#[derive(Parser)]
#[command(name = "smcts", version, about = "Surrogate-assisted tree search for store closure")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate a transaction CSV into a store network JSON.
    Ingest(IngestArgs),
    /// Choose stores to close with SMCTS (or plain MCTS with --no-surrogate).
    Solve(SolveArgs),
    /// Run SMCTS and plain MCTS on the same instance and compare them.
    Compare(SolveArgs),
    /// Exhaustive optimum for small instances.
    Oracle(OracleArgs),
    /// Run an experiment grid from a JSON spec and write CSV tables.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Output network JSON.
    #[arg(long)]
    out: PathBuf,
    /// JSON map from logical column names to CSV headers.
    #[arg(long)]
    columns: Option<PathBuf>,
    /// Keep only transactions from this calendar year.
    #[arg(long)]
    year: Option<i32>,
    #[arg(long, default_value_t = smcts::network::DEFAULT_RADIUS_MILES)]
    radius: f64,
    #[arg(long, default_value_t = smcts::network::DEFAULT_RECAPTURE_GAMMA)]
    gamma: f64,
}

#[derive(Args)]
struct InstanceArgs {
    /// Network JSON written by `ingest`.
    #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
    network: Option<PathBuf>,
    /// Transaction CSV, aggregated with the default column names.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Restrict to one county (case-insensitive).
    #[arg(long)]
    county: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SurrogateChoice {
    Naive,
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum UcbChoice {
    Paper,
    Log,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakChoice {
    LowestId,
    RandomSeeded,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Number of stores to close.
    #[arg(long = "remove", value_name = "M")]
    remove: usize,
    /// Iteration budget.
    #[arg(long, default_value_t = 5000)]
    budget: u64,
    /// Optional wall-clock budget in seconds.
    #[arg(long)]
    seconds: Option<f64>,
    /// UCB exploration constant.
    #[arg(long = "C", value_name = "C", default_value_t = 1.0)]
    exploration_c: f64,
    #[arg(long, value_enum, default_value = "paper")]
    ucb: UcbChoice,
    #[arg(long, value_enum, default_value = "lowest-id")]
    tie_break: TieBreakChoice,
    #[arg(long, value_enum, default_value = "naive")]
    surrogate: SurrogateChoice,
    /// Target normalized RMSE of the noisy surrogate.
    #[arg(long)]
    nrmse: Option<f64>,
    /// Error bound in normalized units, overriding calibration.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plain MCTS on the main evaluator.
    #[arg(long)]
    no_surrogate: bool,
    /// Keep the surrogate but skip the re-evaluation pass.
    #[arg(long)]
    no_reevaluation: bool,
    #[arg(long, default_value_t = 200)]
    calibration_samples: usize,
    /// Write the final tree as JSON lines.
    #[arg(long)]
    dump_tree: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long = "remove", value_name = "M")]
    remove: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for runs.csv, summary.csv and failures.csv.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Csv(_) | Error::Search(_) | Error::StoreClosed(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn print_json(value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_instance(args: &InstanceArgs) -> CliResult<StoreNetwork> {
    let network = match (&args.network, &args.csv) {
        (Some(path), _) => StoreNetwork::read_json(path)?,
        (None, Some(path)) => aggregate_csv_file(path, &IngestOptions::default())?.0,
        (None, None) => return Err(usage("one of --network or --csv is required")),
    };
    match &args.county {
        Some(county) => Ok(filter_county(&network, county)?),
        None => Ok(network),
    }
}

fn cmd_ingest(args: IngestArgs) -> CliResult<()> {
    let columns = match &args.columns {
        Some(path) => ColumnMap::read_json(path)?,
        None => ColumnMap::default(),
    };
    let options = IngestOptions {
        columns,
        year: args.year,
        radius_miles: args.radius,
        recapture_gamma: args.gamma,
    };
    let (network, report) = aggregate_csv_file::<f64>(&args.csv, &options)?;
    network.write_json(&args.out)?;
    log::info!("wrote {} stores to {}", network.len(), args.out.display());
    print_json(&json!({
        "stores": network.len(),
        "total_sales": network.total_base_sales(),
        "mean_neighbor_degree": network.mean_neighbor_degree(),
        "report": report,
    }))
}

fn search_config(args: &SolveArgs) -> SearchConfig {
    SearchConfig {
        closures: args.remove,
        exploration_c: args.exploration_c,
        budget_iterations: args.budget,
        budget_seconds: args.seconds,
        seed: args.seed,
        ucb_variant: match args.ucb {
            UcbChoice::Paper => UcbVariant::Paper,
            UcbChoice::Log => UcbVariant::Log,
        },
        tie_break: match args.tie_break {
            TieBreakChoice::LowestId => TieBreak::LowestId,
            TieBreakChoice::RandomSeeded => TieBreak::RandomSeeded,
        },
        reevaluation_enabled: !args.no_reevaluation,
    }
}

enum Surrogate {
    Naive(NaiveSurrogate),
    Noisy(NoisySurrogate),
}

impl Surrogate {
    fn model(&self) -> &dyn LossModel<f64> {
        match self {
            Surrogate::Naive(m) => m,
            Surrogate::Noisy(m) => m,
        }
    }
}

fn build_surrogate(args: &SolveArgs, network: &StoreNetwork) -> CliResult<Surrogate> {
    match (args.surrogate, args.nrmse) {
        (SurrogateChoice::Naive, None) => Ok(Surrogate::Naive(NaiveSurrogate)),
        (SurrogateChoice::Naive, Some(_)) => Err(usage("--nrmse only applies to --surrogate noisy")),
        (SurrogateChoice::Noisy, None) => Err(usage("--surrogate noisy needs --nrmse")),
        (SurrogateChoice::Noisy, Some(target)) => {
            Ok(Surrogate::Noisy(NoisySurrogate::new(network, target, args.seed)?))
        }
    }
}

fn validate_solve(args: &SolveArgs, network: &StoreNetwork) -> CliResult<SearchConfig> {
    let config = search_config(args);
    config.validate(network.len())?;
    if args.sigma.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
        return Err(usage("--sigma must be a finite value >= 0"));
    }
    if args.no_surrogate && (args.sigma.is_some() || args.nrmse.is_some()) {
        return Err(usage("--no-surrogate cannot be combined with --sigma or --nrmse"));
    }
    if args.calibration_samples == 0 {
        return Err(usage("--calibration-samples must be >= 1"));
    }
    Ok(config)
}

/// Runs SMCTS with a calibrated (or overridden) error bound.
fn solve_smcts(
    args: &SolveArgs,
    network: &StoreNetwork,
    config: SearchConfig,
) -> CliResult<(SearchResult, smcts::SearchTree)> {
    let surrogate = build_surrogate(args, network)?;
    let report = calibrate_sigma(
        surrogate.model(),
        &MainModel,
        network,
        args.calibration_samples,
        args.seed,
    )?;
    let sigma = match args.sigma {
        Some(normalized) => report.denormalize(normalized),
        None => report.sigma_s,
    };
    log::info!(
        "surrogate nrmse {:.4}, sigma {:.4} normalized ({sigma:.2} loss units)",
        report.nrmse_surrogate(),
        sigma / report.normalizer.max(f64::MIN_POSITIVE)
    );
    Ok(Searcher::smcts(network, &MainModel, surrogate.model(), sigma, config)?.run()?)
}

fn write_tree(path: &Path, tree: &smcts::SearchTree, network: &StoreNetwork) -> CliResult<()> {
    let file = File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    tree.dump_jsonl(network, &mut out)?;
    out.flush().map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_solve(args: SolveArgs) -> CliResult<()> {
    let network = load_instance(&args.instance)?;
    let config = validate_solve(&args, &network)?;
    let (result, tree) = if args.no_surrogate {
        Searcher::mcts(&network, &MainModel, config)?.run()?
    } else {
        solve_smcts(&args, &network, config)?
    };
    if let Some(path) = &args.dump_tree {
        write_tree(path, &tree, &network)?;
    }
    print_json(&result)
}

fn cmd_compare(args: SolveArgs) -> CliResult<()> {
    if args.no_surrogate {
        return Err(usage("compare always runs both searches; drop --no-surrogate"));
    }
    let network = load_instance(&args.instance)?;
    let config = validate_solve(&args, &network)?;
    let (smcts, _) = solve_smcts(&args, &network, config.clone())?;
    let (mcts, _) = Searcher::mcts(&network, &MainModel, config)?.run()?;
    print_json(&json!({
        "dice": dice_coefficient(&smcts.best_closure_set, &mcts.best_closure_set),
        "ratio": surrogate_ratio(&smcts)?,
        "smcts": smcts,
        "mcts": mcts,
    }))
}

fn cmd_oracle(args: OracleArgs) -> CliResult<()> {
    let network = load_instance(&args.instance)?;
    let (closed, loss) = brute_force_optimal(&network, args.remove, &MainModel)?;
    print_json(&json!({ "closed": closed, "loss": loss }))
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    if args.jobs == Some(0) {
        return Err(usage("--jobs must be >= 1"));
    }
    let spec = SweepSpec::read_json(&args.spec)?;
    let outcome = run_sweep(&spec, args.jobs)?;
    outcome.write_csvs(&args.out)?;
    for failure in &outcome.failures {
        log::warn!("run failed: {failure:?}");
    }
    print_json(&json!({
        "runs": outcome.records.len(),
        "failures": outcome.failures.len(),
        "out": args.out,
    }))?;
    if outcome.records.is_empty() && !outcome.failures.is_empty() {
        return Err(runtime("every sweep run failed; see failures.csv"));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("SMCTS_LOG")
        .init();

    let outcome = match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
