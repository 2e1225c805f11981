use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hfc_cli::commands::{
    cmd_ablate, cmd_eval, cmd_prepare, cmd_train, AblateArgs, EvalArgs, PrepareArgs, TrainArgs,
};
use hfc_cli::{CliError, RunConfig};
use hfc_core::datasets::PrepareConfig;
use hfc_core::Variant;

#[derive(Parser)]
#[command(name = "hfcnet", version, about = "Hippocampus segmentation with hierarchical feedback chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn volumes (or synthetic data) into slices with a fold manifest.
    Prepare {
        /// Directory with imagesTr/ and labelsTr/.
        #[arg(long)]
        input_dir: Option<PathBuf>,
        #[arg(long)]
        output_dir: PathBuf,
        /// Generate this many synthetic slices instead of reading volumes.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 32)]
        roi_size: usize,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        noise_fraction: f64,
        #[arg(long, default_value_t = 12)]
        min_slices: usize,
        #[arg(long, default_value_t = 20)]
        max_slices: usize,
    },
    /// Train one configuration on one fold.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "HFC_DATA_ROOT")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from last.ckpt in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a split; optionally write CAM panels.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = "HFC_DATA_ROOT")]
        data_dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        cam: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train and test ablation rows over several seeds.
    Ablate {
        #[arg(long, env = "HFC_DATA_ROOT")]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated rows; all seven when omitted.
        #[arg(long, value_delimiter = ',')]
        rows: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Base configuration; the variant in it is replaced per row.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
    },
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Prepare {
            input_dir,
            output_dir,
            synthetic,
            roi_size,
            folds,
            seed,
            noise_fraction,
            min_slices,
            max_slices,
        } => {
            let config = PrepareConfig {
                roi_size,
                min_slices,
                max_slices,
                noise_fraction,
                folds,
                seed,
            };
            cmd_prepare(&PrepareArgs {
                input_dir,
                output_dir,
                synthetic,
                config,
            })?;
        }
        Command::Train {
            config,
            data_dir,
            fold,
            val_fraction,
            out_dir,
            resume,
        } => {
            cmd_train(&TrainArgs {
                config: RunConfig::load(&config)?,
                data_dir,
                fold,
                val_fraction,
                out_dir,
                resume,
            })?;
        }
        Command::Eval {
            checkpoint,
            data_dir,
            split,
            fold,
            val_fraction,
            out_dir,
            cam,
            threshold,
        } => {
            cmd_eval(&EvalArgs {
                checkpoint,
                data_dir,
                split,
                fold,
                val_fraction,
                out_dir,
                cam,
                threshold,
            })?;
        }
        Command::Ablate {
            data_dir,
            out_dir,
            rows,
            seeds,
            config,
            fold,
            val_fraction,
        } => {
            let rows = if rows.is_empty() {
                Variant::ALL.to_vec()
            } else {
                rows.iter().map(|r| r.parse()).collect::<Result<Vec<Variant>, _>>()?
            };
            let base = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default_for(Variant::Full, 0),
            };
            cmd_ablate(&AblateArgs {
                base,
                data_dir,
                out_dir,
                rows,
                seeds,
                fold,
                val_fraction,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
