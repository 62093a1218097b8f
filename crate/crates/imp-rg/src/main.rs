use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use imp_rg::config::ExperimentConfig;
use imp_rg::harness::{self, run_experiment, run_transfer, write_run};
use imp_rg::report;
use imp_rg_core::nn::Mask;
use imp_rg_core::tasks::energy_drift;

/// Iterative magnitude pruning of Hamiltonian neural networks.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Overrides the base seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one dense network and print its losses.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run IMP once and write its trace and masks.
    Imp {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every seed of a config, average, analyze and report.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summary of a stored experiment without writing anything.
    Analyze {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Transfer the masks of a source experiment onto a stored one.
    Transfer {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        source: PathBuf,
        /// Skip source rounds below this density.
        #[arg(long)]
        min_density: Option<f64>,
    },
    /// Rewrite the summary and plot tables of a stored experiment.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        config.run.seed = seed;
    }
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config } => {
            let config = load(config.as_deref(), cli.seed)?;
            let outcome = harness::train_single(&config, config.run.seed)?;
            let task = config.task_binding()?;
            let grid = task.grid(config.train.grid_points)?;
            let mask = Mask::ones(outcome.params.spec());
            let drift = energy_drift(&outcome.params, &mask, &task, &grid)?;
            print_json(&serde_json::json!({
                "seed": config.run.seed,
                "initial_loss": outcome.initial_loss,
                "final_loss": outcome.final_loss,
                "energy_drift": drift,
            }))?;
        }
        Command::Imp { config, out } => {
            let config = load(config.as_deref(), cli.seed)?;
            let trace = harness::run_single(&config, config.run.seed)?;
            write_run(&out, &trace)?;
            let last = trace.records.last().expect("IMP yields records");
            eprintln!(
                "{} rounds, final density {:.4}, loss {:.4e}",
                trace.records.len(),
                last.density,
                last.final_loss
            );
        }
        Command::Experiment { config, out } => {
            let mut config = load(Some(&config), cli.seed)?;
            if let Some(out) = out {
                config.run.output_dir = out;
            }
            let artifact = run_experiment(&config)?;
            eprintln!(
                "{} of {} runs completed; artifacts in {}",
                artifact.summary.runs.completed,
                artifact.summary.runs.requested,
                artifact.dir.display()
            );
            print_json(&artifact.summary)?;
        }
        Command::Analyze { dir } => print_json(&report::analyze(&dir)?)?,
        Command::Transfer {
            dir,
            source,
            min_density,
        } => {
            let rows = run_transfer(&dir, &source, min_density)?;
            let winning = rows.iter().filter(|r| r.winning).count();
            eprintln!("{} rows, {winning} winning", rows.len());
        }
        Command::Report { dir } => {
            report::emit_report(&dir)?;
        }
    }
    Ok(())
}
