//! `cavt`: sampling, synthetic data, training, inference, evaluation, and checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cavt_core::model::CavtConfig;
use config::RunConfig;

/// Failure classes, each with a fixed exit code.
#[derive(Debug)]
pub enum CliError {
    /// A check ran and did not pass.
    Verification(String),
    /// Input data is unreadable or violates a domain constraint.
    Data(String),
    /// Bad flags, config keys, or values.
    Usage(String),
    /// Runtime configuration disagrees with a checkpoint.
    Compatibility(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Data(_) => 2,
            CliError::Usage(_) => 64,
            CliError::Compatibility(_) => 65,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Verification(m)
            | CliError::Data(m)
            | CliError::Usage(m)
            | CliError::Compatibility(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cavt",
    version,
    about = "Engagement regression with binary-order sampling and a class-attention video transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat key=value config file; `#` starts a comment.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Representative order: bfs, halving, or random.
    #[arg(long, value_name = "MODE")]
    pub order_mode: Option<String>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output path; standard output when omitted, where that makes sense.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, base: CavtConfig) -> Result<RunConfig, CliError> {
        let mut rc = RunConfig::new(base);
        if let Some(path) = &self.config {
            rc.apply_file(path)?;
        }
        for s in &self.set {
            rc.assign(s)?;
        }
        if let Some(mode) = &self.order_mode {
            rc.sampler = config::parse_sampler(mode)?;
        }
        if let Some(seed) = self.seed {
            rc.train.seed = seed;
        }
        Ok(rc)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the frame-index sequences BorS draws from a packed video.
    Sample {
        video: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a labelled synthetic dataset (packed videos plus manifest) into a directory.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a manifest; writes the checkpoint to --out and the loss log beside it.
    Train {
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print `video_id,y` for every manifest entry.
    Predict {
        manifest: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// MSE, MMSE, and per-level errors against manifest labels.
    Eval {
        manifest: PathBuf,
        #[arg(
            long,
            value_name = "PATH",
            conflicts_with = "predictions",
            required_unless_present = "predictions"
        )]
        checkpoint: Option<PathBuf>,
        /// Score an existing `video_id,y` file instead of running a model.
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare reverse-mode gradients with central differences on a small model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Perturb one analytic gradient before comparing (negative control).
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Per-tensor parameter shapes and the total count.
    Summary {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let full = CavtConfig::default;
    match cli.command {
        Command::Sample { video, common } => {
            commands::sample(&video, &common.resolve(full())?, common.out.as_deref())
        }
        Command::Synth { common } => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| CliError::Usage("synth needs --out DIR".into()))?;
            commands::synth(&common.resolve(full())?, &out)
        }
        Command::Train { manifest, common } => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| CliError::Usage("train needs --out PATH".into()))?;
            commands::train(&manifest, &common.resolve(full())?, &out)
        }
        Command::Predict {
            manifest,
            checkpoint,
            common,
        } => commands::predict(
            &manifest,
            &checkpoint,
            &common.resolve(full())?,
            common.out.as_deref(),
        ),
        Command::Eval {
            manifest,
            checkpoint,
            predictions,
            common,
        } => {
            let rc = common.resolve(full())?;
            commands::eval(
                &manifest,
                checkpoint.as_deref(),
                predictions.as_deref(),
                &rc,
                common.out.as_deref(),
            )
        }
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => commands::gradcheck(
            &common.resolve(CavtConfig::tiny())?,
            corrupt_gradient,
            common.out.as_deref(),
        ),
        Command::Summary { common } => {
            commands::summary(&common.resolve(full())?, common.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(64)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cavt: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
