mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use termcast_core::model::{FusionMode, Variant};

const CONFIG_HELP: &str = "\
Configuration file (--config): sections of `key = value` lines. Every key is
optional; unknown sections or keys are an error. The effective configuration
is written to <out>/config.ini.

  [data]   path, train_fraction (0.8)
  [model]  relation_dim (256), conv_filters (32), conv_layers (3),
           transformer_depth (2), heads (4), g_hidden (256),
           mlp_r_hidden (512), mlp_extra_hidden (128), variant (full),
           fusion (c5), alpha (1), beta (1)
           hidden widths are comma-separated lists
  [train]  epochs (300), batch_size (16), lr (0.001), seed (0),
           early_stop_patience (20), validation_fraction (0.1),
           seeds (1,2,3,4,5) for ablate / sweep-fusion
  [grid]   rows, cols, lon_min, lon_max, lat_min, lat_max,
           interval_seconds (3600), start, end (epoch seconds; default:
           the span of the trajectories)
  [synth]  seed, height (8), width (8), weeks (6), interval_hours (1),
           daily_amp (10), weekly_amp (5), noise_std (2), noise_corr (0.8)

Exit codes: 0 success, 1 gradient check failed, 2 usage or config error,
3 numerical failure during training.";

#[derive(Parser, Debug)]
#[command(name = "termcast", version, about = "Grid crowd-flow forecasting", after_help = CONFIG_HELP)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides [train] seed (and [synth] seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Input file: trajectories CSV for `ingest`, a UFS1 series otherwise.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub fusion: Option<FusionMode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate trajectories (traj_id,timestamp,lon,lat) into a UFS1 flow series.
    Ingest,
    /// Write a seeded synthetic flow series.
    Synth,
    /// Train one model and report test metrics against the historical average.
    Train,
    /// Score a saved checkpoint on the test split of --data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every ablation variant for each configured seed.
    Ablate,
    /// Train every fusion mode for each configured seed.
    SweepFusion,
    /// Finite-difference gradient checks of every layer and model stage.
    Gradcheck {
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest => commands::ingest(&cli.common),
        Command::Synth => commands::synth(&cli.common),
        Command::Train => commands::train(&cli.common),
        Command::Eval { checkpoint } => commands::eval(&cli.common, &checkpoint),
        Command::Ablate => commands::ablate(&cli.common),
        Command::SweepFusion => commands::sweep_fusion(&cli.common),
        Command::Gradcheck { seeds } => commands::gradcheck(&seeds),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
