//! `maskseed`: synthetic data generation, training, inference, evaluation and self-checks.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "maskseed", version, about = "Class-agnostic mask proposals on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Architecture and scene defaults.
    #[arg(long, value_parser = ["paper", "desk"])]
    preset: Option<String>,
    /// Extra `section.key=value` setting; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic scenes and their annotation file.
    Gen {
        #[arg(long)]
        scenes: Option<usize>,
        /// First scene id.
        #[arg(long)]
        first_id: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train both branches with alternating SGD.
    Train {
        /// Annotation file produced by `gen`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint written by an earlier run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Dense multi-scale inference over every image of an annotation file.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Add the extra smaller pyramid scale.
        #[arg(long)]
        zoom: bool,
        #[arg(long)]
        max_proposals: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a proposal file against annotations.
    Eval {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_parser = ["mask", "box"])]
        iou: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Redraw SVG plots from an evaluation report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Gradient checks, loss structure, dense/patchwise agreement and metric oracles.
    Selftest {
        /// Corrupt one component to confirm the suite catches it (conv2d).
        #[arg(long)]
        inject_fault: Option<String>,
        /// Fewer seeds and cases.
        #[arg(long)]
        quick: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure with its exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Check(m) => f.write_str(m),
        }
    }
}

impl From<maskseed::Error> for CliError {
    fn from(e: maskseed::Error) -> Self {
        use maskseed::Error as E;
        match e {
            E::Config(_) | E::Usage(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl Common {
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(self.preset.as_deref(), self.config.as_deref(), &self.set)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> CliResult<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Usage("--out DIR is required for this command".into()))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen {
            scenes,
            first_id,
            common,
        } => commands::gen(&common, scenes, first_id),
        Command::Train {
            data,
            steps,
            resume,
            common,
        } => commands::train(&common, &data, steps, resume.as_deref()),
        Command::Infer {
            weights,
            data,
            zoom,
            max_proposals,
            common,
        } => commands::infer(&common, &weights, &data, zoom, max_proposals),
        Command::Eval {
            proposals,
            annotations,
            iou,
            common,
        } => commands::eval(&common, &proposals, &annotations, iou.as_deref()),
        Command::Plot { report, common } => commands::plot(&common, &report),
        Command::Selftest {
            inject_fault,
            quick,
            common,
        } => commands::selftest(&common, inject_fault.as_deref(), quick),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
