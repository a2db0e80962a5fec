use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use disentangle::commands;
use disentangle::{AppError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "disentangle", version, about = "Adversarial disentanglement of an expression factor")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Seeds training, the split and the synthetic renderer.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    beta1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    beta2: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    beta3: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// A dataset cache file or an image folder.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Checkpoint to evaluate, swap with, or resume training from.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render (or ingest) the configured dataset and write a cache file.
    GenData {
        /// Cache path; defaults to <output-dir>/dataset.bin.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write config, checkpoints, metrics.csv and curves.png.
    Train,
    /// Score a checkpoint and write report.csv.
    Eval {
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Decode two images with their expression codes exchanged.
    Swap {
        image_a: PathBuf,
        image_b: PathBuf,
        /// Grid path; defaults to <output-dir>/swap.png.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per reconstruction weight; writes ablation.csv and ablation.png.
    Ablate {
        /// Comma-separated reconstruction weights; defaults to the config's list.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        beta1_values: Option<Vec<f64>>,
    },
}

fn run(cli: Cli) -> Result<(), AppError> {
    let c = &cli.common;
    let overrides = Overrides {
        output_dir: c.output_dir.clone(),
        seed: c.seed,
        beta1: c.beta1,
        beta2: c.beta2,
        beta3: c.beta3,
        epochs: c.epochs,
        dataset: c.dataset.clone(),
    };
    if let Some(p) = &c.dataset {
        if !p.exists() {
            return Err(AppError::DatasetNotFound(p.clone()));
        }
    }
    let cfg = RunConfig::load(c.config.as_deref(), &overrides)?;
    let need_checkpoint = || c.checkpoint.clone().ok_or_else(|| AppError::Config("--checkpoint is required".into()));

    match cli.command {
        Command::GenData { out } => {
            commands::gen_data(&cfg, out.as_deref())?;
        }
        Command::Train => {
            let ckpt = commands::train(cfg.clone(), c.checkpoint.as_deref())?;
            println!("trained {} steps; run directory {}", ckpt.state.step, cfg.output_dir.display());
        }
        Command::Eval { split } => {
            commands::eval(cfg, &need_checkpoint()?, &split)?;
        }
        Command::Swap { image_a, image_b, out } => {
            let out = out.unwrap_or_else(|| cfg.output_dir.join(commands::SWAP_FILE));
            commands::swap(&need_checkpoint()?, &image_a, &image_b, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Ablate { beta1_values } => {
            let values = beta1_values.unwrap_or_else(|| cfg.ablation_beta1.clone());
            commands::ablate(cfg, &values)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
