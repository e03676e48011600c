use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grelax_cli::{report, sweep, workflow, CliError, ExperimentConfig};
use grelax_core::models::RelaxToggles;

#[derive(Parser)]
#[command(name = "grelax", version, about = "Adaptive attacks on relaxed graph transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the dataset into <out>/dataset.
    Generate(Common),
    /// Train the configured models into <out>/models.
    Train(Common),
    /// Adaptive, random and transfer sweeps into <out>/attack.
    Attack(Common),
    /// Toggle ablation at a fixed budget into <out>/ablate.
    Ablate(Common),
    /// Aggregate results into CSVs under <out>/report.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Data/model seed for generate and train; the single attack seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one architecture.
    #[arg(long)]
    model: Option<String>,
    /// Single budget fraction.
    #[arg(long)]
    budget: Option<f64>,
    /// Comma list of enabled relaxations, `all` or `none`.
    #[arg(long)]
    toggles: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
    /// Accepted for symmetry with the other subcommands; unused.
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Stage {
    Setup,
    Sweep,
}

fn load(c: &Common, stage: Stage) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(m) = &c.model {
        cfg.restrict_model(m)?;
    }
    if let Some(s) = c.seed {
        match stage {
            Stage::Setup => cfg.seed = s,
            Stage::Sweep => cfg.seeds = vec![s],
        }
    }
    if let Some(b) = c.budget {
        cfg.attack.budgets = vec![b];
        cfg.ablation.budget = b;
    }
    if let Some(t) = &c.toggles {
        cfg.attack.params.toggles = RelaxToggles::parse(t).map_err(CliError::Validation)?;
        cfg.ablation.toggle_sets = vec![t.clone()];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => {
            workflow::cmd_generate(&load(&c, Stage::Setup)?, &c.out)?;
        }
        Command::Train(c) => {
            workflow::cmd_train(&load(&c, Stage::Setup)?, &c.out)?;
        }
        Command::Attack(c) => {
            sweep::cmd_attack(&load(&c, Stage::Sweep)?, &c.out)?;
        }
        Command::Ablate(c) => {
            sweep::cmd_ablate(&load(&c, Stage::Sweep)?, &c.out)?;
        }
        Command::Report(r) => {
            let report = report::cmd_report(&r.out)?;
            for gap in &report.gaps {
                eprintln!("warning: {gap}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
