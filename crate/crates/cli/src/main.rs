use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use offloadnet::gcnn::Aggregation;
use offloadnet_cli::commands::{self, EvalOptions, TrainOptions};
use offloadnet_cli::config::{parse_sizes, ExperimentConfig};
use offloadnet_cli::records::PolicyTag;

/// Congestion-aware distributed task offloading: dataset generation, model
/// training, policy evaluation, and reporting.
#[derive(Parser)]
#[command(name = "offloadnet", version, about)]
struct Cli {
    /// Master seed for all derived RNG streams.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON file mirroring the experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test instance files and the dataset manifest.
    Generate(GenerateArgs),
    /// Train the weight model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate policies on the test split.
    Eval(EvalArgs),
    /// Aggregate a results file into summary CSVs.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Network sizes: "start:end:step" or a comma list.
    #[arg(long)]
    sizes: Option<String>,

    /// Training instances.
    #[arg(long)]
    train: Option<usize>,

    /// Test instances.
    #[arg(long)]
    test: Option<usize>,

    /// Task draws per instance.
    #[arg(long)]
    draws: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.jsonl.
    #[arg(long)]
    data: PathBuf,

    /// Learning rate.
    #[arg(long)]
    alpha: Option<f64>,

    /// Step budget; early stopping usually ends training sooner. 0 writes
    /// the initialized model unchanged.
    #[arg(long, default_value_t = 20_000)]
    max_steps: usize,

    /// Resume from a saved model instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,

    /// Neighborhood term of the convolution layers.
    #[arg(long, value_enum, default_value_t = AggregationArg::ScaledSelf)]
    aggregation: AggregationArg,

    /// Global-norm gradient bound; 0 disables clipping.
    #[arg(long, default_value_t = 1e4)]
    clip_norm: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum AggregationArg {
    ScaledSelf,
    NeighborDiff,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::ScaledSelf => Aggregation::ScaledSelf,
            AggregationArg::NeighborDiff => Aggregation::NeighborDiff,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Directory holding test.jsonl.
    #[arg(long)]
    data: PathBuf,

    /// Trained model file; required for the gnn policy.
    #[arg(long)]
    model: Option<PathBuf>,

    /// Comma list of policies to evaluate.
    #[arg(long, default_value = "baseline,local,gnn")]
    policies: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV produced by eval.
    #[arg(long)]
    results: PathBuf,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    offloadnet_cli::init_thread_pool();

    match cli.command {
        Command::Generate(args) => {
            if let Some(spec) = &args.sizes {
                cfg.sizes = parse_sizes(spec)?;
            }
            if let Some(train) = args.train {
                cfg.train_count = train;
            }
            if let Some(test) = args.test {
                cfg.test_count = test;
            }
            if let Some(draws) = args.draws {
                cfg.task_draws = draws;
            }
            commands::cmd_generate(&cfg)
        }
        Command::Train(args) => {
            if let Some(alpha) = args.alpha {
                cfg.alpha = alpha;
            }
            commands::cmd_train(
                &cfg,
                &TrainOptions {
                    data_dir: args.data,
                    max_steps: args.max_steps,
                    init_model: args.init,
                    aggregation: args.aggregation.into(),
                    clip_norm: args.clip_norm,
                },
            )
        }
        Command::Eval(args) => {
            let policies = args
                .policies
                .split(',')
                .map(|p| p.trim().parse::<PolicyTag>())
                .collect::<Result<Vec<_>>>()?;
            commands::cmd_eval(
                &cfg,
                &EvalOptions {
                    data_dir: args.data,
                    model: args.model,
                    policies,
                },
            )
        }
        Command::Report(args) => commands::cmd_report(&cfg, &args.results),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
