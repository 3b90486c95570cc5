use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use weakenlab::cli::{
    cmd_attack, cmd_eval, cmd_sweep, cmd_train, cmd_weaken_preview, SweepLevel,
};

#[derive(Parser)]
#[command(name = "weakenlab", version, about = "Feature-weakening augmentation lab")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per configured seed and write metrics, checkpoints
    /// and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Sweep weakening strength at one level and write the accuracy curve.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        level: SweepLevel,
        /// Comma-separated weakening strengths, each in (0,1).
        #[arg(long, value_delimiter = ',', required = true)]
        ws: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// White- and black-box robustness table over trained checkpoints.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean Top-1/Top-5 of a checkpoint on the config's validation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Export weakened sample images as P5 graymaps plus scatter CSVs.
    WeakenPreview {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ws: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// How many samples to export.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
}

fn run(args: Args) -> weakenlab::Result<()> {
    match args.command {
        Command::Train { config, out, seed, threads } => {
            let mean = cmd_train(&config, &out, seed, threads)?;
            println!("mean best Top-1: {mean:.2}%  ({})", out.display());
        }
        Command::Sweep { config, level, ws, out, threads } => {
            cmd_sweep(&config, level, &ws, &out, threads)?;
            println!("curve written to {}", out.join("curve.csv").display());
        }
        Command::Attack { config, out } => {
            let rows = cmd_attack(&config, &out)?;
            for r in &rows {
                println!("{} {} {} eps={}: {:.2}%", r.method, r.attack, r.mode, r.epsilon, r.accuracy);
            }
        }
        Command::Eval { checkpoint, config } => {
            let (top1, top5) = cmd_eval(&checkpoint, &config)?;
            println!("Top-1: {top1:.2}%  Top-5: {top5:.2}%");
        }
        Command::WeakenPreview { config, ws, out, count } => {
            cmd_weaken_preview(&config, &ws, &out, count)?;
            println!("previews written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
