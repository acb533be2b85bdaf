use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tactile_diffusion_cli::{run, Command, RunConfig, OUT_ENV};

#[derive(Parser)]
#[command(name = "tacdiff", about = "Simulated-to-real tactile image diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML experiment config; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs/default")]
    out: PathBuf,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Dotted config override, e.g. `--set pretrain.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Render the pretraining, fine-tuning and classifier corpora.
    Simulate,
    /// Pretrain the denoiser on primitive contacts.
    Train,
    /// Fine-tune the pretrained denoiser on braille contacts.
    Finetune,
    /// Generate images from the fine-tuned model.
    Sample,
    /// Score generated images against their targets.
    Eval,
    /// Train and score the braille classifiers on every image source.
    Compare,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Train => Command::Train,
        Cmd::Finetune => Command::Finetune,
        Cmd::Sample => Command::Sample,
        Cmd::Eval => Command::Eval,
        Cmd::Compare => Command::Compare,
    };
    let rc = RunConfig {
        command,
        config_path: cli.config,
        seed: cli.seed,
        out: cli.out,
        force: cli.force,
        overrides: cli.overrides,
    };
    match run(&rc) {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("{}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
