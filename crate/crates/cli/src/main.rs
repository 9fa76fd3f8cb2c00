use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedgen_core::harness::{self, Ablation, ExperimentConfig, SweepParam};
use fedgen_core::{Error, ErrorKind};

/// Generative client selection for simulated federated learning.
#[derive(Debug, Parser)]
#[command(name = "fedgen", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the collector roster and write the selection/score corpus.
    Collect,
    /// Train the encoder-evaluator-decoder on the corpus.
    Train,
    /// Generate one selection from the trained model.
    Select {
        /// Start from the records of this round only.
        #[arg(long)]
        round: Option<usize>,
    },
    /// Run one policy for the configured rounds and write per-round metrics.
    Run {
        /// random, oort, explore, gcs, or a collector tag from the roster.
        #[arg(long)]
        policy: String,
    },
    /// Vary alpha or top-K for the generative selector.
    Sweep {
        #[arg(long, value_parser = ["alpha", "topk"])]
        param: String,
        /// Comma-separated values; the default grid covers the studied range.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Compare the generative selector against its corpus ablations.
    Ablate {
        #[arg(long, value_parser = ["no-collectors", "no-augmentation"])]
        variant: Vec<String>,
    },
    /// Summarize every metrics file in the output directory.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let seed = cli
                .seed
                .ok_or_else(|| Error::Config("either --config or --seed is required".into()))?;
            ExperimentConfig::with_seed(seed)
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<PathBuf, Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Collect => harness::cmd_collect(&cfg),
        Command::Train => harness::cmd_train(&cfg),
        Command::Select { round } => harness::cmd_select(&cfg, *round),
        Command::Run { policy } => harness::cmd_run(&cfg, policy),
        Command::Sweep { param, grid } => {
            let param = SweepParam::parse(param)?;
            let grid = if grid.is_empty() { param.default_grid() } else { grid.clone() };
            harness::cmd_sweep(&cfg, param, &grid)
        }
        Command::Ablate { variant } => {
            let variants = if variant.is_empty() {
                Ablation::ALL.to_vec()
            } else {
                variant.iter().map(|v| Ablation::parse(v)).collect::<Result<_, _>>()?
            };
            harness::cmd_ablate(&cfg, &variants)
        }
        Command::Report => harness::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
