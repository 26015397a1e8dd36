//! `wwrn`: train, attack and inspect wavelet-pooled residual networks.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wwrn_core::io::RunConfig;
use wwrn_core::Error;

#[derive(Parser)]
#[command(
    name = "wwrn",
    version,
    about = "Wavelet-pooled residual networks under adversarial attack"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one key; repeatable and applied after the file.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shortcut for `--set out.dir=DIR`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save its best checkpoint and history.
    Train,
    /// Clean accuracy and accuracy under FGSM, PGD, MIM and CW for a checkpoint.
    Eval,
    /// Run one attack against a checkpoint.
    Attack {
        /// Attack method; `nes` selects the score-based black-box attack.
        #[arg(long)]
        method: Option<String>,
        /// Perturbation budget for the selected method.
        #[arg(long)]
        epsilon: Option<String>,
    },
    /// Error rate under single Fourier-basis perturbations.
    Heatmap,
    /// Class activation map for one test image.
    Gradcam,
    /// Numerical checks.
    Check {
        #[arg(value_enum)]
        what: CheckKind,
    },
    /// Train and evaluate a family of variants.
    Sweep {
        #[arg(value_enum)]
        what: SweepKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckKind {
    /// Reconstruction, energy and pooling-norm residuals of every filter bank.
    Wavelet,
    /// Decay, local regularity and dyadic modulus checks.
    Theorems,
}

#[derive(Clone, Copy, ValueEnum)]
pub(crate) enum SweepKind {
    /// One variant per wavelet base in `sweep.bases`.
    Bases,
    /// One variant per pooling position in `sweep.positions`.
    Positions,
    /// The configured model with and without wavelet pooling.
    Ablation,
}

/// Process exit code for each error category.
fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "format" => 3,
        "numeric" => 4,
        _ => 1,
    }
}

fn resolve(global: &Global) -> wwrn_core::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&global.overrides)?;
    if let Some(out) = &global.out {
        cfg.set("out.dir", &out.to_string_lossy())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> wwrn_core::Result<()> {
    let mut cfg = resolve(&cli.global)?;
    if let Command::Attack { method, epsilon } = &cli.command {
        commands::apply_attack_flags(&mut cfg, method.as_deref(), epsilon.as_deref())?;
    }
    commands::echo_config(&cfg)?;
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Attack { method, .. } => commands::attack(&cfg, method.as_deref() == Some("nes")),
        Command::Heatmap => commands::heatmap(&cfg),
        Command::Gradcam => commands::gradcam(&cfg),
        Command::Check {
            what: CheckKind::Wavelet,
        } => commands::check_wavelet(&cfg),
        Command::Check {
            what: CheckKind::Theorems,
        } => commands::check_theorems(&cfg),
        Command::Sweep { what } => commands::sweep(&cfg, what),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wwrn: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
