//! `serialcons`: experiment runner for serial consensus designs.
//!
//! Every run writes `config.json` (the effective config, seed included)
//! next to its outputs; `--config out/config.json` repeats it exactly.

mod commands;
mod config;
mod error;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::{CommandConfig, ExperimentConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "serialcons", version, about = "Serial consensus synthesis, sweeps, simulation and robustness margins")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON); mutually exclusive with --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps and Monte-Carlo runs (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

#[derive(Debug, Args)]
struct Selection {
    /// Built-in experiment.
    #[arg(long)]
    preset: Option<String>,
    /// Print the preset names and exit.
    #[arg(long)]
    list_presets: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expand L_k = s_k L into relative feedback gains and check locality.
    Synthesize(Selection),
    /// Consensus stability over a range of graph sizes.
    Sweep {
        #[command(flatten)]
        selection: Selection,
        /// Also write per-N spectra as JSON.
        #[arg(long)]
        full_spectra: bool,
    },
    /// Simulate a closed loop and judge consensus.
    Simulate(Selection),
    /// Small-gain margins, perturbed loops and Monte-Carlo robustness.
    Margin(Selection),
    /// Closed-loop spectrum and stability verdict.
    Spectrum(Selection),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Synthesize(_) => "synthesize",
            Self::Sweep { .. } => "sweep",
            Self::Simulate(_) => "simulate",
            Self::Margin(_) => "margin",
            Self::Spectrum(_) => "spectrum",
        }
    }

    fn selection(&self) -> &Selection {
        match self {
            Self::Synthesize(s) | Self::Simulate(s) | Self::Margin(s) | Self::Spectrum(s) => s,
            Self::Sweep { selection, .. } => selection,
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let name = cli.command.name();
    let selection = cli.command.selection();
    let mut cfg = match (&cli.config, &selection.preset) {
        (Some(_), Some(_)) => return Err(CliError::Config("--config and --preset are mutually exclusive".into())),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let cfg: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))?;
            if cfg.command.name() != name {
                return Err(CliError::Config(format!(
                    "config is for '{}', not '{name}'",
                    cfg.command.name()
                )));
            }
            cfg
        }
        (None, Some(preset)) => ExperimentConfig {
            seed: 0,
            command: presets::preset(name, preset).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown {name} preset '{preset}' (available: {})",
                    presets::names(name).join(", ")
                ))
            })?,
        },
        (None, None) => {
            return Err(CliError::Config(format!(
                "pass --config <json> or --preset <name> (available: {})",
                presets::names(name).join(", ")
            )))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let (Command::Sweep { full_spectra: true, .. }, CommandConfig::Sweep(s)) = (&cli.command, &mut cfg.command) {
        s.full_spectra = true;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cli.out.display())))?;
    let ctx = Context {
        out: cli.out.clone(),
        seed: cfg.seed,
        jobs: cli.jobs.map(|j| j as usize),
    };
    ctx.write_json("config.json", &cfg)?;
    match &cfg.command {
        CommandConfig::Synthesize(c) => commands::synthesize(c, &ctx),
        CommandConfig::Sweep(c) => commands::sweep(c, &ctx),
        CommandConfig::Simulate(c) => commands::simulate_cmd(c, &ctx),
        CommandConfig::Margin(c) => commands::margin(c, &ctx),
        CommandConfig::Spectrum(c) => commands::spectrum_cmd(c, &ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let selection = cli.command.selection();
    if selection.list_presets {
        for name in presets::names(cli.command.name()) {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("serialcons: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
