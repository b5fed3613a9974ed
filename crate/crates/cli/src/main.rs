use std::path::PathBuf;
use std::process::ExitCode;

use bmoe::eval::Method;
use clap::{ArgGroup, Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod manifest;

use config::TaskKind;
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "bmoe",
    version,
    about = "Biased mixtures of experts under per-input data-cost budgets"
)]
struct Cli {
    /// Worker threads for independent trainings and sweep cells.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train one frozen expert per preprocessing spec and report p.
    TrainExperts(TrainExpertsArgs),
    /// Solve for the bias vector meeting a cost or performance target.
    SolveBias(SolveBiasArgs),
    /// Train a gating network over trained experts.
    TrainMixture(TrainMixtureArgs),
    /// Run methods x targets x seeds and write results and a report.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    #[arg(long, value_enum)]
    task: Option<TaskKind>,

    /// Output directory.
    #[arg(short, long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long, env = "BMOE_SEED")]
    seed: Option<u64>,

    #[arg(long, value_name = "N")]
    n_per_class: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainExpertsArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long, env = "BMOE_SEED")]
    seed: Option<u64>,

    /// Dataset directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,

    /// Comma-separated specs, e.g. `mask:0,mask:0+1` or `pool:4,pool:16`.
    #[arg(long, value_delimiter = ',')]
    experts: Option<Vec<String>>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("target").required(true).args(["cost", "perf"])))]
#[command(group(ArgGroup::new("source").required(true).args(["report", "d"])))]
struct SolveBiasArgs {
    /// Target average data cost in bytes.
    #[arg(long)]
    cost: Option<f64>,

    /// Target performance.
    #[arg(long)]
    perf: Option<f64>,

    /// Expert report (`p.json`) from train-experts, supplying d and p.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,

    /// Costs as a JSON array.
    #[arg(long, requires = "p")]
    d: Option<String>,

    /// Performances as a JSON array.
    #[arg(long, requires = "d")]
    p: Option<String>,

    /// Also write the solution to this file.
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("bias").required(true).args(["b", "cost"])))]
struct TrainMixtureArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long, env = "BMOE_SEED")]
    seed: Option<u64>,

    #[arg(long, value_name = "DIR")]
    data: PathBuf,

    /// Directory written by train-experts.
    #[arg(long, value_name = "DIR")]
    experts_dir: PathBuf,

    /// Bias vector as a JSON array.
    #[arg(long)]
    b: Option<String>,

    /// Solve for b at this target cost instead.
    #[arg(long)]
    cost: Option<f64>,

    /// `enforcement` or `soft`.
    #[arg(long, default_value = "enforcement", value_parser = parse_method)]
    method: Method,

    /// Bias-loss weight for soft regularization.
    #[arg(long, default_value_t = 1.0)]
    w_bias: f64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,

    /// Comma-separated seeds.
    #[arg(long, env = "BMOE_SEED", value_delimiter = ',')]
    seed: Option<Vec<u64>>,

    /// Comma-separated subset of enforcement, soft, random, single.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    method: Option<Vec<Method>>,

    /// `auto` or comma-separated byte targets.
    #[arg(long)]
    targets: Option<String>,

    /// Comma-separated expert specs, as for train-experts.
    #[arg(long, value_delimiter = ',')]
    experts: Option<Vec<String>>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainExperts(a) => commands::train_experts(a),
        Command::SolveBias(a) => commands::solve_bias(a),
        Command::TrainMixture(a) => commands::train_mixture(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    let result = match cli.jobs {
        Some(0) => Err(CliError::usage("--jobs must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(CliError::usage(format!("--jobs: {e}"))),
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
