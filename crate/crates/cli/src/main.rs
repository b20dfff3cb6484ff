use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use snn_core::config::load_config;
use snn_core::experiment::{self, RunReport};
use snn_core::{Error, Experiment, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "snn-sense", version, about = "Spectral neural network matrix-sensing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, env = "SNN_SENSE_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and persist the measurement ensemble of a config.
    Gen(Common),
    /// Reduced gradient flow on a commuting ensemble.
    Commuting(Common),
    /// SNN against linear regression and depth-3 factorization.
    Compare(Common),
    /// Image recovery from Gaussian measurements.
    Image(Common),
}

fn load(common: &Common, expected: Option<Experiment>) -> Result<ExperimentConfig, Error> {
    let mut cfg = load_config(&common.config).map_err(|e| match e {
        Error::Io(io) => Error::ConfigInvalid {
            field: "--config".into(),
            message: format!("{}: {io}", common.config.display()),
        },
        other => other,
    })?;
    if let Some(exp) = expected {
        if cfg.experiment != exp {
            return Err(Error::ConfigInvalid {
                field: "experiment".into(),
                message: format!("config describes {:?}, subcommand expects {:?}", cfg.experiment.name(), exp.name()),
            });
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<RunReport, Error> {
    let (common, expected) = match &cli.command {
        Command::Gen(c) => (c, None),
        Command::Commuting(c) => (c, Some(Experiment::Commuting)),
        Command::Compare(c) => (c, Some(Experiment::GeneralCompare)),
        Command::Image(c) => (c, Some(Experiment::ImageRecovery)),
    };
    let cfg = load(common, expected)?;
    let dir = cfg.output_dir.clone();
    match cli.command {
        Command::Gen(_) => experiment::gen(&cfg, &dir),
        _ => experiment::run(&cfg, &dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            let record = json!({
                "status": "ok",
                "dir": report.dir,
                "artifacts": report.files.len(),
                "cells": report.cells,
                "failed_cells": report.failed_cells,
            });
            println!("{record}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", json!({ "status": "error", "kind": e.kind(), "message": e.to_string(), "exit_code": code }));
            ExitCode::from(code as u8)
        }
    }
}
